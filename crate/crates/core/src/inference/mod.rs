//! Parameter recovery: lifetime-trace fitting and transition classification.

mod classify;
mod decay;
mod lm;

pub use classify::{classify_transition, classify_transition_with, ClassificationResult, DEFAULT_DEPTH_THRESHOLD};
pub use decay::{
    fit_decay, fit_decay_with, fit_residuals, DecayTrace, FitOptions, FitResult, AMPLITUDE, BACKGROUND, DELTA_FSS,
    IRF_FWHM, T0, TAU, THETA,
};
