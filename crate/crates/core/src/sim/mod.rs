//! Monte Carlo generation of emission events and detector click streams.

mod rng;
mod sampler;
mod streams;

pub use rng::{Domain, RngSpec, PULSE_CHUNK};
pub use sampler::{sample_emission_time, EmissionSampler, ExcitonTable};
pub use streams::{
    acquire_lifetime, expected_g2, hbt_streams, hom_streams, p_two_photon_for_g2, reexcitation_for_g2,
    simulate_pulse_train, ClickRecord, Origin, PhotonEvent, PulseTrain,
};
