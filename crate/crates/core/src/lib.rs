//! Characterization toolkit for pulsed quantum-dot single-photon sources.
//!
//! The crate models the cross-polarized emission of neutral excitons and
//! trions, simulates detector click streams for Hanbury Brown-Twiss and
//! Hong-Ou-Mandel setups, estimates purity, indistinguishability and
//! brightness from coincidence histograms, fits lifetime traces and
//! classifies transitions from polarization scans.

pub mod bench;
pub mod correlation;
pub mod dynamics;
pub mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
