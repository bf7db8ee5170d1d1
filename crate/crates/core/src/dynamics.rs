//! Deterministic emission-intensity models.
//!
//! The exciton is prepared in the cavity-`V` state by a π-pulse and evolves as
//! two independently decaying eigenstates `V'`, `H'`; the collected intensity is
//! its projection on the orthogonal cavity mode `H`. The trion decays
//! mono-exponentially with an instantaneous rise. Instrument response enters
//! through [`convolve_irf`].

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ExcitonParams, Transition, TrionParams, HBAR};

/// `2·sqrt(2·ln 2)`, the FWHM of a unit-σ Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Kernels are truncated at this many standard deviations on each side.
const KERNEL_HALF_WIDTH_SIGMAS: f64 = 8.0;

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be finite and >= 0, got {t}")))
    }
}

/// Amplitudes `(a_V', a_H')` of the exciton state at time `t` (ps) after a
/// `V`-polarized π-pulse.
pub fn exciton_amplitudes(t: f64, p: &ExcitonParams) -> Result<(Complex64, Complex64)> {
    check_time(t)?;
    let decay = (-t / (2.0 * p.tau)).exp();
    let (s, c) = p.theta.sin_cos();
    let a_v = Complex64::from_polar(c * decay, -p.e_v() * t / HBAR);
    let a_h = Complex64::from_polar(s * decay, -p.e_h() * t / HBAR);
    Ok((a_v, a_h))
}

/// Intensity emitted into the cross-polarized `H` mode,
/// `e^{-t/τ} sin²(tΔ/2ħ) sin²(2θ)`.
pub fn exciton_cross_intensity(t: f64, p: &ExcitonParams) -> Result<f64> {
    check_time(t)?;
    Ok(exciton_cross_intensity_unchecked(t, p))
}

pub(crate) fn exciton_cross_intensity_unchecked(t: f64, p: &ExcitonParams) -> f64 {
    let beat = (t * p.delta_fss / (2.0 * HBAR)).sin();
    let orient = (2.0 * p.theta).sin();
    (-t / p.tau).exp() * beat * beat * orient * orient
}

/// Unnormalized mono-exponential trion emission, `e^{-t/τ}`.
pub fn trion_intensity(t: f64, p: &TrionParams) -> Result<f64> {
    check_time(t)?;
    Ok((-t / p.tau).exp())
}

/// Model intensity of either transition, zero before the excitation pulse.
pub fn emission_intensity(transition: &Transition, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    match transition {
        Transition::Exciton(x) => exciton_cross_intensity_unchecked(t, x),
        Transition::Trion(tr) => (-t / tr.tau).exp(),
    }
}

/// Closed-form `∫₀^∞` of [`emission_intensity`]:
/// `sin²(2θ)·(τ/2)·r²/(1+r²)` with `r = Δτ/ħ` for the exciton, `τ` for the trion.
pub fn emission_integral(transition: &Transition) -> f64 {
    match transition {
        Transition::Exciton(x) => {
            let r = x.splitting_lifetime_product();
            let orient = (2.0 * x.theta).sin().powi(2);
            orient * 0.5 * x.tau * r * r / (1.0 + r * r)
        }
        Transition::Trion(t) => t.tau,
    }
}

/// First maximum of the cross-polarized exciton emission: the root of
/// `tan(Δt/2ħ) = Δτ/ħ` on its first branch.
pub fn peak_emission_delay(p: &ExcitonParams) -> Result<f64> {
    if !(p.delta_fss > 0.0) {
        return Err(Error::NoMaximum(
            "zero fine-structure splitting gives no cross-polarized emission".into(),
        ));
    }
    if !(p.tau > 0.0) {
        return Err(Error::Domain(format!("lifetime must be > 0, got {}", p.tau)));
    }
    let omega = p.delta_fss / HBAR;
    // atan(inf) = π/2 covers the non-decaying limit
    let x = (omega * p.tau).atan();
    Ok(2.0 * x / omega)
}

/// Model intensity sampled on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityCurve {
    start: f64,
    step: f64,
    values: Vec<f64>,
}

impl IntensityCurve {
    /// Builds a curve from explicit samples; the grid must be strictly
    /// increasing and uniform to 1e-9 relative, and all values non-negative.
    pub fn from_grid(t_grid: &[f64], values: Vec<f64>) -> Result<Self> {
        if t_grid.len() != values.len() {
            return Err(Error::Precondition(format!(
                "grid has {} points but {} values",
                t_grid.len(),
                values.len()
            )));
        }
        if t_grid.len() < 2 {
            return Err(Error::Precondition("curve needs at least two points".into()));
        }
        let step = (t_grid[t_grid.len() - 1] - t_grid[0]) / (t_grid.len() - 1) as f64;
        if !(step > 0.0) {
            return Err(Error::Precondition("time grid must be strictly increasing".into()));
        }
        for (i, w) in t_grid.windows(2).enumerate() {
            let d = w[1] - w[0];
            if !(d > 0.0) || ((d - step) / step).abs() > 1e-9 {
                return Err(Error::Precondition(format!(
                    "time grid not uniform at index {i}: step {d} vs {step}"
                )));
            }
        }
        Self::from_uniform(t_grid[0], step, values)
    }

    pub fn from_uniform(start: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Precondition(format!("grid step must be > 0, got {step}")));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::Precondition(format!(
                "intensity at index {i} is negative or NaN"
            )));
        }
        Ok(Self { start, step, values })
    }

    /// Tabulates `f` at `start + i·step` for `i in 0..n`.
    pub fn tabulate(start: f64, step: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..n).map(|i| f(start + i as f64 * step)).collect();
        Self::from_uniform(start, step, values)
    }

    /// The emission model of `transition` on the default grid: 1 ps steps
    /// spanning `[-5σ_jitter, 10τ]`.
    pub fn for_transition(transition: &Transition, jitter_fwhm: f64) -> Result<Self> {
        let step = 1.0;
        let start = -(5.0 * fwhm_to_sigma(jitter_fwhm)).ceil();
        let end = 10.0 * transition.tau();
        let n = ((end - start) / step).ceil() as usize + 1;
        Self::tabulate(start, step, n, |t| emission_intensity(transition, t))
    }

    pub fn grid_step(&self) -> f64 {
        self.step
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn t_grid(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Rectangle-rule integral `Σ values · step`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.step
    }
}

/// Gaussian instrument-response kernel sampled on a grid and normalized to
/// unit discrete area.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    step: f64,
    sigma: f64,
    half: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64, step: f64) -> Self {
        let half = (KERNEL_HALF_WIDTH_SIGMAS * sigma / step).ceil() as usize;
        let mut weights: Vec<f64> = (0..=2 * half)
            .map(|i| {
                let t = (i as f64 - half as f64) * step;
                (-0.5 * (t / sigma).powi(2)).exp()
            })
            .collect();
        let norm: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= norm);
        Self {
            step,
            sigma,
            half,
            weights,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Number of taps on each side of zero lag.
    pub fn half_width(&self) -> usize {
        self.half
    }

    /// Kernel taps; index `half` is zero lag.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn lag(&self, i: usize) -> f64 {
        (i as f64 - self.half as f64) * self.step
    }

    /// Taps of the time derivative `dG/dt`, consistent with the normalized kernel.
    pub fn time_derivative(&self) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| -self.lag(i) / s2 * w / self.step)
            .collect()
    }

    /// Exact derivative of the normalized taps with respect to `sigma`.
    pub fn sigma_derivative(&self) -> Vec<f64> {
        let s3 = self.sigma.powi(3);
        let a: Vec<f64> = (0..self.weights.len())
            .map(|i| self.lag(i).powi(2) / s3)
            .collect();
        let mean: f64 = self.weights.iter().zip(&a).map(|(w, a)| w * a).sum();
        self.weights
            .iter()
            .zip(&a)
            .map(|(w, a)| w * (a - mean))
            .collect()
    }

    /// Same-length discrete convolution with zero padding outside the input.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        convolve_same(values, &self.weights, self.half)
    }
}

/// Same-length convolution of `x` with `taps` centered on index `half`,
/// treating samples outside `x` as zero.
pub(crate) fn convolve_same(x: &[f64], taps: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        // output i receives x[j]·taps[i - j + half]
        let lo = j.saturating_sub(half);
        let hi = (j + half).min(n - 1);
        let tap0 = lo + half - j;
        for (o, t) in out[lo..=hi].iter_mut().zip(&taps[tap0..]) {
            *o += xj * t;
        }
    }
    out
}

/// Convolves `curve` with a unit-area Gaussian of the given FWHM on the same
/// grid. Mass within 5σ of either end of the grid is partially lost; pad the
/// grid when the integral must be preserved.
pub fn convolve_irf(curve: &IntensityCurve, fwhm: f64) -> Result<IntensityCurve> {
    if !(fwhm >= 0.0) || !fwhm.is_finite() {
        return Err(Error::Domain(format!("IRF FWHM must be >= 0, got {fwhm}")));
    }
    if fwhm == 0.0 {
        return Ok(curve.clone());
    }
    if curve.step > fwhm / 4.0 {
        return Err(Error::Resolution {
            step: curve.step,
            limit: fwhm / 4.0,
        });
    }
    let kernel = GaussianKernel::new(fwhm_to_sigma(fwhm), curve.step);
    let values = kernel
        .apply(&curve.values)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    Ok(IntensityCurve {
        start: curve.start,
        step: curve.step,
        values,
    })
}

/// Integrated line intensities collected in cross-polarization when the
/// excitation polarization is rotated by `phi` from the cavity `V` axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhiScanPoint {
    pub phi: f64,
    pub cavity_light: f64,
    pub qd_light: f64,
}

/// Cavity-rotated laser light follows `sin²(2φ)`. An exciton line follows
/// `sin²(2(θ-φ))`; a trion line does not depend on `φ`.
pub fn phi_scan_model(
    phi: f64,
    transition: &Transition,
    amp_cavity: f64,
    amp_qd: f64,
) -> Result<PhiScanPoint> {
    if !(amp_cavity >= 0.0 && amp_qd >= 0.0) {
        return Err(Error::Precondition(format!(
            "amplitudes must be >= 0, got cavity {amp_cavity}, qd {amp_qd}"
        )));
    }
    let cavity_light = amp_cavity * (2.0 * phi).sin().powi(2);
    let qd_light = match transition {
        Transition::Exciton(x) => amp_qd * (2.0 * (x.theta - phi)).sin().powi(2),
        Transition::Trion(_) => amp_qd,
    };
    Ok(PhiScanPoint {
        phi,
        cavity_light,
        qd_light,
    })
}

/// `n` evenly spaced angles over `[0, π]` inclusive.
pub fn phi_grid(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| PI * i as f64 / (n - 1) as f64).collect()
}
