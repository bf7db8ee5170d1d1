//! Synthetic source fleets with prescribed kind-level statistics.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{ExcitonParams, SourceParams, Transition, TransitionKind, TrionParams};
use crate::sim::{p_two_photon_for_g2, Domain, RngSpec};

/// Mean and standard deviation of a normally distributed property.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

const fn spread(mean: f64, std: f64) -> Spread {
    Spread { mean, std }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindTargets {
    pub count: usize,
    pub g2: Spread,
    pub overlap: Spread,
    pub brightness: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub exciton: KindTargets,
    pub trion: KindTargets,
    pub wavelength: Spread,
    pub trion_tau: Spread,
    /// Uniform range of exciton lifetimes (ps).
    pub exciton_tau: (f64, f64),
    /// Uniform range of fine-structure splittings (µeV).
    pub exciton_fss: (f64, f64),
    /// Uniform range of dipole angles (degrees).
    pub exciton_theta_deg: (f64, f64),
}

impl Default for FleetSpec {
    /// Seven exciton and eight trion sources with the published fleet averages.
    fn default() -> Self {
        Self {
            exciton: KindTargets {
                count: 7,
                g2: spread(0.0289, 0.0074),
                overlap: spread(0.928, 0.011),
                brightness: spread(0.115, 0.037),
            },
            trion: KindTargets {
                count: 8,
                g2: spread(0.0542, 0.0092),
                overlap: spread(0.895, 0.028),
                brightness: spread(0.147, 0.046),
            },
            wavelength: spread(924.7, 0.5),
            trion_tau: spread(180.0, 17.0),
            exciton_tau: (200.0, 300.0),
            exciton_fss: (5.0, 10.0),
            exciton_theta_deg: (20.0, 70.0),
        }
    }
}

impl FleetSpec {
    pub fn targets(&self, kind: TransitionKind) -> &KindTargets {
        match kind {
            TransitionKind::Exciton => &self.exciton,
            TransitionKind::Trion => &self.trion,
        }
    }
}

/// `n` stratified normal draws: one from each equal-probability slice, in
/// random order. Sample means stay close to `s.mean` even for small `n`.
fn stratified(rng: &mut impl Rng, s: Spread, n: usize) -> Vec<f64> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let u = (i as f64 + rng.random::<f64>()) / n as f64;
            s.mean + s.std * unit.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
        })
        .collect();
    v.shuffle(rng);
    v
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

/// Draws a fleet. Labels are `X01..` for excitons and `T01..` for trions.
pub fn generate_fleet(spec: &FleetSpec, seed: u64) -> Result<Vec<SourceParams>> {
    let mut rng = RngSpec::new(seed, 0).substream(Domain::General, 0);
    let total = spec.exciton.count + spec.trion.count;
    if total == 0 {
        return Err(Error::EmptyInput("fleet has no sources".into()));
    }
    let wavelengths = stratified(&mut rng, spec.wavelength, total);
    let mut out = Vec::with_capacity(total);
    for kind in [TransitionKind::Exciton, TransitionKind::Trion] {
        let t = spec.targets(kind);
        let n = t.count;
        let g2 = stratified(&mut rng, t.g2, n);
        let overlap = stratified(&mut rng, t.overlap, n);
        let brightness = stratified(&mut rng, t.brightness, n);
        let transitions: Vec<Transition> = match kind {
            TransitionKind::Exciton => {
                let tau = uniform(&mut rng, spec.exciton_tau, n);
                let fss = uniform(&mut rng, spec.exciton_fss, n);
                let theta = uniform(&mut rng, spec.exciton_theta_deg, n);
                (0..n)
                    .map(|i| Transition::Exciton(ExcitonParams::new(tau[i], fss[i], theta[i].to_radians())))
                    .collect()
            }
            TransitionKind::Trion => stratified(&mut rng, spec.trion_tau, n)
                .into_iter()
                .map(|tau| Transition::Trion(TrionParams { tau: tau.max(20.0) }))
                .collect(),
        };
        let prefix = match kind {
            TransitionKind::Exciton => 'X',
            TransitionKind::Trion => 'T',
        };
        for (i, transition) in transitions.into_iter().enumerate() {
            // physical bounds; the tails of the targets never reach them
            let b = brightness[i].clamp(0.01, 0.5);
            let g = g2[i].clamp(0.0, 0.3);
            out.push(SourceParams {
                label: format!("{prefix}{:02}", i + 1),
                transition,
                brightness_first_lens: b,
                p_two_photon: p_two_photon_for_g2(g, b)?,
                dephasing: 1.0 - overlap[i].clamp(0.0, 1.0),
                wavelength: wavelengths[out.len()],
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_source;
    use crate::sim::expected_g2;

    #[test]
    fn default_fleet_has_seven_excitons_and_eight_trions() {
        let f = generate_fleet(&FleetSpec::default(), 3).unwrap();
        assert_eq!(f.len(), 15);
        assert_eq!(f.iter().filter(|s| s.kind() == TransitionKind::Exciton).count(), 7);
        for s in f {
            validate_source(s).unwrap();
        }
    }

    #[test]
    fn stratified_means_track_targets() {
        let spec = FleetSpec::default();
        let f = generate_fleet(&spec, 11).unwrap();
        let trions: Vec<&SourceParams> = f.iter().filter(|s| s.kind() == TransitionKind::Trion).collect();
        let g: f64 = trions
            .iter()
            .map(|s| expected_g2(s.p_two_photon / s.brightness_first_lens.powi(2)))
            .sum::<f64>()
            / 8.0;
        // stratification keeps the sample mean well inside one standard error
        assert!((g - 0.0542).abs() < 0.0092 / 8f64.sqrt(), "{g}");
    }
}
