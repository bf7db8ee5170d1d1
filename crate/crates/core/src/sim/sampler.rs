use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ExcitonParams, SourceParams, Transition, HBAR};

/// Samples emission delays with density proportional to the transition's
/// intensity model.
///
/// The trion is inverted in closed form. The exciton CDF has a closed form but
/// no closed-form inverse, so it is tabulated on a grid, the cell holding the
/// target probability is located by bisection, and the root is polished with
/// safeguarded Newton steps on the exact CDF.
#[derive(Debug, Clone)]
pub enum EmissionSampler {
    Trion { tau: f64 },
    Exciton(ExcitonTable),
}

#[derive(Debug, Clone)]
pub struct ExcitonTable {
    rate: f64,
    omega: f64,
    step: f64,
    cdf: Vec<f64>,
}

impl ExcitonTable {
    /// Unnormalized CDF `∫₀^t e^{-as}(1 - cos ωs)/2 ds`.
    fn raw_cdf(&self, t: f64) -> f64 {
        let a = self.rate;
        let z = Complex64::new(a, -self.omega);
        let osc = (Complex64::new(1.0, 0.0) - (-z * t).exp()) / z;
        0.5 * (-(-a * t).exp_m1()) / a - 0.5 * osc.re
    }

    fn raw_density(&self, t: f64) -> f64 {
        (-self.rate * t).exp() * (0.5 * self.omega * t).sin().powi(2)
    }

    fn invert(&self, target: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c <= target).clamp(1, self.cdf.len() - 1);
        let (mut lo, mut hi) = ((i - 1) as f64 * self.step, i as f64 * self.step);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let mut t = if c1 > c0 {
            lo + (target - c0) / (c1 - c0) * self.step
        } else {
            0.5 * (lo + hi)
        };
        for _ in 0..40 {
            let f = self.raw_cdf(t) - target;
            if f.abs() <= 1e-15 * target.max(1e-300) {
                break;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let d = self.raw_density(t);
            let newton = t - f / d;
            t = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        t
    }
}

impl EmissionSampler {
    pub fn new(transition: &Transition) -> Result<Self> {
        match transition {
            Transition::Trion(t) => {
                if !(t.tau > 0.0) {
                    return Err(Error::Unsamplable(format!("lifetime {} is not positive", t.tau)));
                }
                Ok(EmissionSampler::Trion { tau: t.tau })
            }
            Transition::Exciton(x) => Ok(EmissionSampler::Exciton(Self::exciton_table(x)?)),
        }
    }

    fn exciton_table(x: &ExcitonParams) -> Result<ExcitonTable> {
        let orient = (2.0 * x.theta).sin().powi(2);
        if !(x.delta_fss > 0.0) || orient < 1e-12 || !(x.tau > 0.0) {
            return Err(Error::Unsamplable(format!(
                "exciton with delta_fss = {}, theta = {} emits nothing in cross-polarization",
                x.delta_fss, x.theta
            )));
        }
        let omega = x.delta_fss / HBAR;
        let period = 2.0 * std::f64::consts::PI / omega;
        let step = x.tau.min(period) / 256.0;
        let horizon = 40.0 * x.tau;
        let n = (horizon / step).ceil() as usize + 1;
        let mut table = ExcitonTable {
            rate: 1.0 / x.tau,
            omega,
            step,
            cdf: Vec::new(),
        };
        table.cdf = (0..n).map(|i| table.raw_cdf(i as f64 * step)).collect();
        Ok(table)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // 1 - u lies in (0, 1]
        let u = 1.0 - rng.random::<f64>();
        match self {
            EmissionSampler::Trion { tau } => -tau * u.ln(),
            EmissionSampler::Exciton(t) => t.invert((1.0 - u) * t.cdf[t.cdf.len() - 1]),
        }
    }
}

/// One emission delay (ps) drawn from the source's intensity model.
///
/// Builds a fresh sampler per call; use [`EmissionSampler`] directly when
/// drawing many samples.
pub fn sample_emission_time<R: Rng + ?Sized>(rng: &mut R, source: &SourceParams) -> Result<f64> {
    Ok(EmissionSampler::new(&source.transition)?.sample(rng))
}
