//! Test-side oracles shared by integration tests. Written independently of
//! the library's model evaluation.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub const HBAR: f64 = 658.2119569;

#[derive(Clone, Copy, Debug)]
pub enum Shape {
    Trion { tau: f64 },
    Exciton { tau: f64, delta: f64, theta: f64 },
}

impl Shape {
    pub fn at(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        match *self {
            Shape::Trion { tau } => (-s / tau).exp(),
            Shape::Exciton { tau, delta, theta } => {
                (-s / tau).exp() * (s * delta / (2.0 * HBAR)).sin().powi(2) * (2.0 * theta).sin().powi(2)
            }
        }
    }
}

/// Expected counts per bin: `amp·(shape ⊛ gaussian)` averaged over each bin,
/// plus `bg`. Bins have width `bw` and the first one starts at `start`.
pub fn expected_counts(shape: Shape, t0: f64, fwhm: f64, amp: f64, bg: f64, start: f64, bw: f64, n: usize) -> Vec<f64> {
    let sigma = fwhm / (8.0 * 2f64.ln()).sqrt();
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let h = 0.25;
    let reach = 7.0 * sigma;
    let sub = 8;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..sub {
                let t = start + i as f64 * bw + (k as f64 + 0.5) * bw / sub as f64;
                // source midpoints s_j = (j + 1/2)h, so the s = 0 edge is a cell edge
                let lo = (((t - t0 - reach) / h).floor().max(0.0)) as i64;
                let hi = ((t - t0 + reach) / h).ceil() as i64;
                for j in lo..hi.max(lo) {
                    let s = (j as f64 + 0.5) * h;
                    let d = t - t0 - s;
                    acc += shape.at(s) * norm * (-0.5 * (d / sigma).powi(2)).exp() * h;
                }
            }
            amp * acc / sub as f64 + bg
        })
        .collect()
}

pub fn poisson_noise(mean: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mean.iter()
        .map(|&m| if m > 0.0 { Poisson::new(m).unwrap().sample(&mut rng) } else { 0.0 })
        .collect()
}

/// Centers of `n` bins of width `bw` starting at `start`.
pub fn centers(start: f64, bw: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + (i as f64 + 0.5) * bw).collect()
}

/// Trace of the S7-like exciton with `total` expected counts over
/// `[-512, 4096)` ps in 4 ps bins.
pub fn s7_trace_mean(total: f64, bg_per_bin: f64) -> Vec<f64> {
    let shape = Shape::Exciton { tau: 252.0, delta: 8.58, theta: std::f64::consts::FRAC_PI_4 };
    let unit = expected_counts(shape, 0.0, 53.0, 1.0, 0.0, -512.0, 4.0, 1152);
    let s: f64 = unit.iter().sum();
    unit.iter().map(|u| u * total / s + bg_per_bin).collect()
}

pub fn trion_trace_mean(tau: f64, total: f64, bg_per_bin: f64) -> Vec<f64> {
    let unit = expected_counts(Shape::Trion { tau }, 0.0, 53.0, 1.0, 0.0, -512.0, 4.0, 1152);
    let s: f64 = unit.iter().sum();
    unit.iter().map(|u| u * total / s + bg_per_bin).collect()
}
