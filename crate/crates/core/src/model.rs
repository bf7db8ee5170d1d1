//! Physical constants and the parameter records shared by every other module.
//!
//! Units are fixed crate-wide: time in picoseconds, energy in µeV, wavelength
//! in nm, repetition rates in MHz and count rates in counts per second. With
//! these units the lifetimes (10²–10³ ps) and splittings (~10 µeV) of interest
//! are all order-unity numbers.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Fixed physical constants in crate units.
#[derive(Debug, Clone, Copy)]
pub struct PhysConstants;

impl PhysConstants {
    /// Reduced Planck constant in µeV·ps.
    pub const HBAR: f64 = 658.211_956_9;
}

/// Reduced Planck constant in µeV·ps.
pub const HBAR: f64 = PhysConstants::HBAR;

/// Upper bound on first-lens brightness in a cross-polarized setup: half of the
/// emission is rejected by the collection polarizer.
pub const CROSS_POL_BRIGHTNESS_CAP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    Exciton,
    Trion,
}

impl TransitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TransitionKind::Exciton => "exciton",
            TransitionKind::Trion => "trion",
        }
    }
}

impl std::fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TransitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exciton" | "x" => Ok(TransitionKind::Exciton),
            "trion" | "x+" | "charged" => Ok(TransitionKind::Trion),
            other => Err(Error::Domain(format!("unknown transition kind `{other}`"))),
        }
    }
}

/// Neutral exciton: two fine-structure-split eigenstates `V'`, `H'` sharing one
/// Purcell-enhanced lifetime.
///
/// The eigenstate energies are stored as their splitting plus a mean; only the
/// splitting is observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitonParams {
    /// Lifetime (ps).
    pub tau: f64,
    /// Fine-structure splitting `E_V' - E_H'` (µeV).
    pub delta_fss: f64,
    /// Angle between the cavity `V` axis and the `V'` dipole (rad), in `[0, π)`.
    pub theta: f64,
    /// Mean eigenstate energy (µeV). Only contributes a global phase.
    #[serde(default)]
    pub e_mean: f64,
}

impl ExcitonParams {
    /// Builds exciton parameters with `theta` folded into `[0, π)`.
    pub fn new(tau: f64, delta_fss: f64, theta: f64) -> Self {
        Self {
            tau,
            delta_fss,
            theta: canonical_theta(theta),
            e_mean: 0.0,
        }
    }

    /// Energy of the `V'` eigenstate (µeV).
    pub fn e_v(&self) -> f64 {
        self.e_mean + 0.5 * self.delta_fss
    }

    /// Energy of the `H'` eigenstate (µeV).
    pub fn e_h(&self) -> f64 {
        self.e_mean - 0.5 * self.delta_fss
    }

    /// Dimensionless product of splitting and lifetime, `Δτ/ħ`.
    pub fn splitting_lifetime_product(&self) -> f64 {
        self.delta_fss * self.tau / HBAR
    }
}

/// Positively charged exciton: mono-exponential emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrionParams {
    /// Lifetime (ps).
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transition {
    Exciton(ExcitonParams),
    Trion(TrionParams),
}

impl Transition {
    pub fn kind(&self) -> TransitionKind {
        match self {
            Transition::Exciton(_) => TransitionKind::Exciton,
            Transition::Trion(_) => TransitionKind::Trion,
        }
    }

    pub fn tau(&self) -> f64 {
        match self {
            Transition::Exciton(x) => x.tau,
            Transition::Trion(t) => t.tau,
        }
    }
}

/// Physical description of one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub label: String,
    pub transition: Transition,
    /// Probability per pulse that the first emitted photon reaches the first lens.
    pub brightness_first_lens: f64,
    /// Probability per pulse that two photons reach the first lens.
    pub p_two_photon: f64,
    /// Pure-dephasing knob `d`; the mean wavepacket overlap is `1 - d`.
    pub dephasing: f64,
    /// Operation wavelength (nm).
    pub wavelength: f64,
}

impl SourceParams {
    pub fn kind(&self) -> TransitionKind {
        self.transition.kind()
    }

    /// Mean wavepacket overlap of two first photons from consecutive pulses.
    pub fn overlap(&self) -> f64 {
        1.0 - self.dephasing
    }
}

/// Excitation, collection and detection chain shared by all sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetupParams {
    /// Laser repetition rate (MHz).
    pub rep_rate: f64,
    /// Laser pulse FWHM (ps).
    pub pulse_fwhm: f64,
    /// Transmission from the first lens to the output of the collection fiber.
    pub eta_setup: f64,
    /// Single-photon detector efficiency.
    pub eta_det: f64,
    /// Gaussian detector timing jitter, FWHM (ps).
    pub jitter_fwhm: f64,
    /// Mean number of leaked laser photons per pulse at the first lens.
    pub laser_leak_per_pulse: f64,
    /// Arm imbalance of the HOM interferometer (ps); `None` means one repetition period.
    pub hom_delay: Option<f64>,
    /// Dark count rate per detector (counts/s).
    pub dark_rate: f64,
}

impl Default for SetupParams {
    fn default() -> Self {
        Self {
            rep_rate: 81.0,
            pulse_fwhm: 15.0,
            eta_setup: 0.40,
            eta_det: 0.30,
            jitter_fwhm: 53.0,
            laser_leak_per_pulse: 0.0,
            hom_delay: None,
            dark_rate: 0.0,
        }
    }
}

impl SetupParams {
    /// Repetition period (ps).
    pub fn rep_period(&self) -> f64 {
        1.0e6 / self.rep_rate
    }

    pub fn hom_delay(&self) -> f64 {
        self.hom_delay.unwrap_or_else(|| self.rep_period())
    }

    /// Overall probability that a photon at the first lens produces a click.
    pub fn detection_efficiency(&self) -> f64 {
        self.eta_setup * self.eta_det
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        positive(&mut v, "rep_rate", self.rep_rate);
        positive(&mut v, "pulse_fwhm", self.pulse_fwhm);
        positive(&mut v, "jitter_fwhm", self.jitter_fwhm);
        probability(&mut v, "eta_setup", self.eta_setup);
        probability(&mut v, "eta_det", self.eta_det);
        probability(&mut v, "laser_leak_per_pulse", self.laser_leak_per_pulse);
        if let Some(d) = self.hom_delay {
            positive(&mut v, "hom_delay", d);
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            v.push(Violation::new("dark_rate", "must be finite and >= 0"));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Folds an angle into `[0, π)`; the cross-polarized intensity depends on
/// `sin²(2θ)` only through `θ mod π`.
pub fn canonical_theta(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    // rem_euclid can round up to exactly π for tiny negative inputs
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Full period of the `sin²(tΔ/2ħ)` beating in the cross-polarized exciton
/// emission, `2πħ/Δ`.
pub fn fss_period(delta_fss: f64) -> Result<f64> {
    if !(delta_fss > 0.0) || !delta_fss.is_finite() {
        return Err(Error::Domain(format!(
            "fine-structure splitting must be > 0, got {delta_fss}"
        )));
    }
    Ok(2.0 * PI * HBAR / delta_fss)
}

/// Checks every invariant of a source record and returns it unchanged, or the
/// complete list of violations.
pub fn validate_source(params: SourceParams) -> Result<SourceParams> {
    let mut v = Vec::new();
    if params.label.trim().is_empty() {
        v.push(Violation::new("label", "must not be empty"));
    }
    match &params.transition {
        Transition::Exciton(x) => {
            positive(&mut v, "tau", x.tau);
            if !(x.delta_fss.is_finite() && x.delta_fss >= 0.0) {
                v.push(Violation::new("delta_fss", "must be finite and >= 0"));
            }
            if !(x.theta.is_finite() && (0.0..PI).contains(&x.theta)) {
                v.push(Violation::new("theta", "must lie in [0, pi)"));
            }
            if !x.e_mean.is_finite() {
                v.push(Violation::new("e_mean", "must be finite"));
            }
        }
        Transition::Trion(t) => positive(&mut v, "tau", t.tau),
    }
    let b = params.brightness_first_lens;
    if !(b.is_finite() && (0.0..=CROSS_POL_BRIGHTNESS_CAP).contains(&b)) {
        v.push(Violation::new(
            "brightness_first_lens",
            format!("must lie in [0, {CROSS_POL_BRIGHTNESS_CAP}], got {b}"),
        ));
    }
    let p2 = params.p_two_photon;
    if !(p2.is_finite() && p2 >= 0.0) {
        v.push(Violation::new("p_two_photon", "must be finite and >= 0"));
    } else if b.is_finite() && p2 > b {
        v.push(Violation::new(
            "p_two_photon",
            format!("must not exceed brightness_first_lens ({p2} > {b})"),
        ));
    }
    probability(&mut v, "dephasing", params.dephasing);
    positive(&mut v, "wavelength", params.wavelength);
    if v.is_empty() {
        Ok(params)
    } else {
        Err(Error::Validation(v))
    }
}

fn positive(v: &mut Vec<Violation>, field: &str, x: f64) {
    if !(x.is_finite() && x > 0.0) {
        v.push(Violation::new(field, format!("must be finite and > 0, got {x}")));
    }
}

fn probability(v: &mut Vec<Violation>, field: &str, x: f64) {
    if !(x.is_finite() && (0.0..=1.0).contains(&x)) {
        v.push(Violation::new(field, format!("must lie in [0, 1], got {x}")));
    }
}

/// Angle in `[0, π/2)` equivalent to `theta` under the quarter-turn symmetry of
/// `sin²(2θ)`-type data.
pub fn quarter_turn_theta(theta: f64) -> f64 {
    let t = theta.rem_euclid(FRAC_PI_2);
    if t >= FRAC_PI_2 {
        0.0
    } else {
        t
    }
}
