use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{covariance, levenberg_marquardt, LmOptions};
use crate::dynamics::{convolve_same, fwhm_to_sigma, GaussianKernel, FWHM_PER_SIGMA};
use crate::error::{Error, Result};
use crate::model::{TransitionKind, HBAR};

pub const AMPLITUDE: &str = "amplitude";
pub const BACKGROUND: &str = "background";
pub const T0: &str = "t0";
pub const TAU: &str = "tau";
pub const DELTA_FSS: &str = "delta_fss";
pub const THETA: &str = "theta";
pub const IRF_FWHM: &str = "irf_fwhm";

const MIN_BINS: usize = 50;
const MIN_SPAN_LIFETIMES: f64 = 3.0;
/// Improvement in χ² over a flat background below which a trace is treated
/// as signal-free.
const MIN_SIGNAL_CHI2: f64 = 50.0;

/// Histogram of photon arrival times; `t_grid` holds bin centers (ps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub t_grid: Vec<f64>,
    pub counts: Vec<f64>,
    pub model_kind: TransitionKind,
}

impl DecayTrace {
    pub fn new(t_grid: Vec<f64>, counts: Vec<f64>, model_kind: TransitionKind) -> Result<Self> {
        if t_grid.len() != counts.len() {
            return Err(Error::Precondition(format!(
                "{} times for {} counts",
                t_grid.len(),
                counts.len()
            )));
        }
        if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("time grid must be strictly increasing".into()));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Precondition("counts must be finite and >= 0".into()));
        }
        Ok(Self {
            t_grid,
            counts,
            model_kind,
        })
    }

    /// Bins of width `bin_width` whose first bin starts at `start`.
    pub fn from_histogram(start: f64, bin_width: f64, counts: Vec<f64>, model_kind: TransitionKind) -> Result<Self> {
        let t = (0..counts.len()).map(|i| start + (i as f64 + 0.5) * bin_width).collect();
        Self::new(t, counts, model_kind)
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.iter().sum()
    }

    fn uniform_step(&self) -> Result<f64> {
        let n = self.t_grid.len();
        if n < 2 {
            return Err(Error::Precondition("trace needs at least two bins".into()));
        }
        let step = (self.t_grid[n - 1] - self.t_grid[0]) / (n - 1) as f64;
        let uniform = self
            .t_grid
            .iter()
            .enumerate()
            .all(|(i, t)| (t - (self.t_grid[0] + i as f64 * step)).abs() <= 1e-6 * step);
        if !uniform {
            return Err(Error::Precondition("fitting needs a uniform time grid".into()));
        }
        Ok(step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Fit the IRF width instead of holding it at the given value.
    pub fit_jitter: bool,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            fit_jitter: false,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: TransitionKind,
    pub params: BTreeMap<String, f64>,
    pub std_errs: BTreeMap<String, f64>,
    /// Parameters held constant during the fit (their errors are zero).
    pub fixed: Vec<String>,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub n_iter: usize,
}

impl FitResult {
    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn std_err(&self, key: &str) -> Option<f64> {
        self.std_errs.get(key).copied()
    }

    /// Fitted model on the bins of `trace`.
    pub fn evaluate(&self, trace: &DecayTrace) -> Result<Vec<f64>> {
        let get = |k: &str| {
            self.param(k)
                .ok_or_else(|| Error::Precondition(format!("fit result lacks `{k}`")))
        };
        let fwhm = get(IRF_FWHM)?;
        let ev = Evaluator::new(trace, self.kind, fwhm, self.param(THETA).unwrap_or(FRAC_PI_4), true)?;
        let p = ShapeParams {
            t0: get(T0)?,
            tau: get(TAU)?,
            delta: self.param(DELTA_FSS).unwrap_or(0.0),
            fwhm,
        };
        let (a, bg) = (get(AMPLITUDE)?, get(BACKGROUND)?);
        Ok(ev.shape(&p, false).value.iter().map(|s| a * s + bg).collect())
    }
}

#[derive(Debug, Clone, Copy)]
struct ShapeParams {
    t0: f64,
    tau: f64,
    delta: f64,
    fwhm: f64,
}

struct Shape {
    value: Vec<f64>,
    d_t0: Vec<f64>,
    d_tau: Vec<f64>,
    d_delta: Vec<f64>,
    d_fwhm: Vec<f64>,
}

/// Bin-averaged, IRF-convolved unit-amplitude emission shape on a uniform grid.
struct Evaluator {
    kind: TransitionKind,
    orientation: f64,
    first: f64,
    step: f64,
    n: usize,
    sub: usize,
    fit_jitter: bool,
}

impl Evaluator {
    /// `fine` selects sub-bins no wider than `min(1 ps, fwhm/8)`; otherwise
    /// only the `fwhm/4` sampling limit is honored.
    fn new(trace: &DecayTrace, kind: TransitionKind, fwhm: f64, theta: f64, fine: bool) -> Result<Self> {
        if !(fwhm > 0.0) || !fwhm.is_finite() {
            return Err(Error::Precondition(format!("IRF FWHM {fwhm} must be positive")));
        }
        let step = trace.uniform_step()?;
        let limit = if fine { (fwhm / 8.0).min(1.0) } else { fwhm / 4.0 };
        let sub = (step / limit).ceil().max(1.0) as usize;
        Ok(Self {
            kind,
            orientation: (2.0 * theta).sin().powi(2),
            first: trace.t_grid[0],
            step,
            n: trace.t_grid.len(),
            sub,
            fit_jitter: false,
        })
    }

    fn h(&self) -> f64 {
        self.step / self.sub as f64
    }

    fn shape(&self, p: &ShapeParams, derivs: bool) -> Shape {
        let h = self.h();
        let kernel = GaussianKernel::new(fwhm_to_sigma(p.fwhm), h);
        let pad = kernel.half_width();
        let len = self.n * self.sub + 2 * pad;
        let mut v = vec![0.0; len];
        let (mut dt0, mut dtau, mut ddelta) = if derivs {
            (vec![0.0; len], vec![0.0; len], vec![0.0; len])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let origin = self.first - 0.5 * self.step + (0.5 - pad as f64) * h;
        let tau = p.tau;
        match self.kind {
            TransitionKind::Trion => {
                // exact cell averages of e^{-s/τ} on s ≥ 0, continuous in t0
                for k in 0..len {
                    let u = origin + k as f64 * h;
                    let b = (u + 0.5 * h - p.t0).max(0.0);
                    if b == 0.0 {
                        continue;
                    }
                    let a = (u - 0.5 * h - p.t0).max(0.0);
                    let (ea, eb) = ((-a / tau).exp(), (-b / tau).exp());
                    // τ(e^{-a/τ} - e^{-b/τ}) without cancellation
                    let integral = tau * ea * -(-(b - a) / tau).exp_m1();
                    v[k] = integral / h;
                    if derivs {
                        let fa = if u - 0.5 * h - p.t0 >= 0.0 { ea } else { 0.0 };
                        dt0[k] = (fa - eb) / h;
                        let g = |x: f64, e: f64| -(x / tau) * e;
                        dtau[k] = (integral / tau + g(b, eb) - g(a, ea)) / h;
                    }
                }
            }
            TransitionKind::Exciton => {
                let w = p.delta / (2.0 * HBAR);
                let o = self.orientation;
                for k in 0..len {
                    let s = origin + k as f64 * h - p.t0;
                    if s <= 0.0 {
                        continue;
                    }
                    let e = (-s / tau).exp();
                    let (sn, cs) = (s * w).sin_cos();
                    let f = o * e * sn * sn;
                    v[k] = f;
                    if derivs {
                        let sin2 = 2.0 * sn * cs;
                        dt0[k] = f / tau - o * e * sin2 * w;
                        dtau[k] = f * s / (tau * tau);
                        ddelta[k] = o * e * sin2 * s / (2.0 * HBAR);
                    }
                }
            }
        }
        let taps = kernel.weights();
        let average = |x: &[f64]| -> Vec<f64> {
            let c = convolve_same(x, taps, pad);
            (0..self.n)
                .map(|i| {
                    let lo = pad + i * self.sub;
                    c[lo..lo + self.sub].iter().sum::<f64>() / self.sub as f64
                })
                .collect()
        };
        let value = average(&v);
        if !derivs {
            return Shape {
                value,
                d_t0: Vec::new(),
                d_tau: Vec::new(),
                d_delta: Vec::new(),
                d_fwhm: Vec::new(),
            };
        }
        let d_fwhm = if self.fit_jitter {
            let c = convolve_same(&v, &kernel.sigma_derivative(), pad);
            (0..self.n)
                .map(|i| {
                    let lo = pad + i * self.sub;
                    c[lo..lo + self.sub].iter().sum::<f64>() / (self.sub as f64 * FWHM_PER_SIGMA)
                })
                .collect()
        } else {
            Vec::new()
        };
        Shape {
            value,
            d_t0: average(&dt0),
            d_tau: average(&dtau),
            d_delta: if self.kind == TransitionKind::Exciton {
                average(&ddelta)
            } else {
                Vec::new()
            },
            d_fwhm,
        }
    }
}

fn weights(counts: &[f64]) -> Vec<f64> {
    counts.iter().map(|&c| 1.0 / c.max(1.0)).collect()
}

/// Weighted linear fit `y ≈ a·s + bg`; returns `(a, bg, χ²)`.
fn linear_amplitude(shape: &[f64], y: &[f64], w: &[f64]) -> Option<(f64, f64, f64)> {
    let (mut sw, mut ss, mut s1, mut sy, mut s1y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&s, &yy), &ww) in shape.iter().zip(y).zip(w) {
        sw += ww;
        ss += ww * s * s;
        s1 += ww * s;
        sy += ww * yy;
        s1y += ww * s * yy;
    }
    let det = ss * sw - s1 * s1;
    if !(det > 1e-300) {
        return None;
    }
    let a = (s1y * sw - s1 * sy) / det;
    let bg = (ss * sy - s1 * s1y) / det;
    let chi2 = shape
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&s, &yy), &ww)| ww * (a * s + bg - yy).powi(2))
        .sum();
    Some((a, bg, chi2))
}

fn moving_average(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Time at which the smoothed curve first rises through half of its maximum
/// above the minimum reached before the maximum.
fn leading_edge(t: &[f64], y: &[f64], smooth: usize) -> Option<f64> {
    let s = moving_average(y, smooth);
    let imax = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b]))?;
    let base = s[..=imax].iter().cloned().fold(f64::INFINITY, f64::min);
    if !(s[imax] > base) {
        return None;
    }
    let level = base + 0.5 * (s[imax] - base);
    let i = (0..=imax).find(|&i| s[i] >= level)?;
    if i == 0 {
        return Some(t[0]);
    }
    let frac = (level - s[i - 1]) / (s[i] - s[i - 1]);
    Some(t[i - 1] + frac * (t[i] - t[i - 1]))
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

struct Start {
    amplitude: f64,
    background: f64,
    t0: f64,
    tau: f64,
    delta: f64,
}

const KNOWN_KEYS: [&str; 7] = [AMPLITUDE, BACKGROUND, T0, TAU, DELTA_FSS, THETA, IRF_FWHM];

/// Coarse profile over `(τ, Δ)`. For each candidate, `t0` is placed so that
/// the model's leading edge matches the data's and amplitude and background
/// come from a weighted linear fit.
fn initial_guess(trace: &DecayTrace, fwhm: f64, theta: f64, init: &BTreeMap<String, f64>) -> Result<Start> {
    let kind = trace.model_kind;
    let ev = Evaluator::new(trace, kind, fwhm, theta, false)?;
    let t = &trace.t_grid;
    let y = &trace.counts;
    let w = weights(y);
    let smooth = ((fwhm / (2.0 * ev.step)).round() as usize).max(1);
    let data_edge = leading_edge(t, y, smooth)
        .ok_or_else(|| Error::DegenerateFit("trace has no rising edge".into()))?;
    let span = t[t.len() - 1] - t[0];
    let probe_t0 = t[0] + 8.0 * fwhm_to_sigma(fwhm);

    let score = |tau: f64, delta: f64| -> Option<(f64, Start)> {
        let t0 = match init.get(T0) {
            Some(&t0) => t0,
            None => {
                let probe = ev.shape(&ShapeParams { t0: probe_t0, tau, delta, fwhm }, false);
                data_edge - (leading_edge(t, &probe.value, smooth)? - probe_t0)
            }
        };
        let shape = ev.shape(&ShapeParams { t0, tau, delta, fwhm }, false);
        let (a, bg, chi2) = linear_amplitude(&shape.value, y, &w)?;
        chi2.is_finite().then_some((
            chi2,
            Start {
                amplitude: a,
                background: bg,
                t0,
                tau,
                delta,
            },
        ))
    };

    let tau_lo = (2.0 * ev.step).max(5.0);
    let tau_hi = (0.5 * span).max(2.0 * tau_lo);
    let exciton = kind == TransitionKind::Exciton;
    let taus = match init.get(TAU) {
        Some(&v) => vec![v],
        None => geometric(tau_lo, tau_hi, 40),
    };
    let deltas = match (exciton, init.get(DELTA_FSS)) {
        (false, _) => vec![0.0],
        (true, Some(&v)) => vec![v],
        (true, None) => geometric(0.5, 60.0, 48),
    };
    let mut best: Option<(f64, Start)> = None;
    let consider = |best: &mut Option<(f64, Start)>, cand: Option<(f64, Start)>| {
        if let Some(c) = cand {
            if best.as_ref().map_or(true, |b| c.0 < b.0) {
                *best = Some(c);
            }
        }
    };
    for &tau in &taus {
        for &delta in &deltas {
            consider(&mut best, score(tau, delta));
        }
    }
    // local refinement around the coarse optimum
    let (tau_ratio, delta_ratio) = (
        if taus.len() > 1 { taus[1] / taus[0] } else { 1.0 },
        if deltas.len() > 1 { deltas[1] / deltas[0] } else { 1.0 },
    );
    if let Some((tc, dc)) = best.as_ref().map(|(_, s)| (s.tau, s.delta)) {
        for i in -4..=4 {
            for j in -4..=4 {
                if (i != 0 && tau_ratio == 1.0) || (j != 0 && delta_ratio == 1.0) {
                    continue;
                }
                let tau = tc * tau_ratio.powf(i as f64 / 4.0);
                let delta = dc * delta_ratio.powf(j as f64 / 4.0);
                consider(&mut best, score(tau, delta));
            }
        }
    }
    let (chi2, mut start) = best.ok_or_else(|| Error::DegenerateFit("no admissible starting point".into()))?;

    // a flat line must be clearly worse, otherwise there is no signal to fit
    let sw: f64 = w.iter().sum();
    let mean = w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sw;
    let flat: f64 = w.iter().zip(y).map(|(a, b)| a * (b - mean).powi(2)).sum();
    if !(flat - chi2 > MIN_SIGNAL_CHI2) || !(start.amplitude > 0.0) {
        return Err(Error::DegenerateFit("trace shows no signal above background".into()));
    }
    if let Some(&a) = init.get(AMPLITUDE) {
        start.amplitude = a;
    }
    if let Some(&b) = init.get(BACKGROUND) {
        start.background = b;
    }
    Ok(start)
}

/// Fits the emission model plus a flat background to a lifetime trace.
///
/// `init` may preset any of `amplitude`, `background`, `t0`, `tau`,
/// `delta_fss` and `theta`; missing values are estimated from the trace. The
/// cross-polarization angle only rescales the exciton amplitude, so it is held
/// at its initial value (default π/4).
pub fn fit_decay(trace: &DecayTrace, irf_fwhm: f64, init: &BTreeMap<String, f64>) -> Result<FitResult> {
    fit_decay_with(trace, irf_fwhm, init, &FitOptions::default())
}

pub fn fit_decay_with(
    trace: &DecayTrace,
    irf_fwhm: f64,
    init: &BTreeMap<String, f64>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if let Some(k) = init.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(Error::Precondition(format!("unknown initial parameter `{k}`")));
    }
    if trace.t_grid.len() < MIN_BINS {
        return Err(Error::Precondition(format!(
            "trace has {} bins, at least {MIN_BINS} are needed",
            trace.t_grid.len()
        )));
    }
    let kind = trace.model_kind;
    let exciton = kind == TransitionKind::Exciton;
    let theta = init.get(THETA).copied().unwrap_or(FRAC_PI_4);
    if exciton && (2.0 * theta).sin().powi(2) < 1e-6 {
        return Err(Error::Precondition(format!("theta = {theta} leaves no cross-polarized emission")));
    }
    let start = initial_guess(trace, irf_fwhm, theta, init)?;
    let span = trace.t_grid[trace.t_grid.len() - 1] - trace.t_grid[0];
    if span < MIN_SPAN_LIFETIMES * start.tau {
        return Err(Error::Precondition(format!(
            "trace spans {span} ps, less than {MIN_SPAN_LIFETIMES} lifetimes of about {:.1} ps",
            start.tau
        )));
    }

    let mut ev = Evaluator::new(trace, kind, irf_fwhm, theta, true)?;
    ev.fit_jitter = opts.fit_jitter;
    let min_fwhm = 4.0 * ev.h();
    let y = &trace.counts;
    let inv_sd: Vec<f64> = y.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect();

    let mut names = vec![AMPLITUDE, BACKGROUND, T0, TAU];
    let mut x0 = vec![start.amplitude, start.background, start.t0, start.tau];
    if exciton {
        names.push(DELTA_FSS);
        x0.push(start.delta);
    }
    if opts.fit_jitter {
        names.push(IRF_FWHM);
        x0.push(irf_fwhm);
    }
    let np = names.len();
    let n = y.len();
    let unpack = |x: &DVector<f64>| ShapeParams {
        t0: x[2],
        tau: x[3],
        delta: if exciton { x[4] } else { 0.0 },
        fwhm: if opts.fit_jitter { x[np - 1] } else { irf_fwhm },
    };
    let eval = |x: &DVector<f64>| {
        let p = unpack(x);
        if !(x[0] > 0.0 && p.tau > 0.0 && (!exciton || p.delta > 0.0) && p.fwhm >= min_fwhm) {
            return None;
        }
        let s = ev.shape(&p, true);
        let a = x[0];
        let r = DVector::from_fn(n, |i, _| (a * s.value[i] + x[1] - y[i]) * inv_sd[i]);
        let mut cols: Vec<&[f64]> = vec![&s.value, &[], &s.d_t0, &s.d_tau];
        if exciton {
            cols.push(&s.d_delta);
        }
        if opts.fit_jitter {
            cols.push(&s.d_fwhm);
        }
        let j = DMatrix::from_fn(n, np, |i, c| {
            let d = match c {
                0 => cols[0][i],
                1 => 1.0,
                _ => a * cols[c][i],
            };
            d * inv_sd[i]
        });
        Some((r, j))
    };
    let lm = LmOptions {
        max_iter: opts.max_iter,
        ..LmOptions::default()
    };
    let out = levenberg_marquardt(DVector::from_vec(x0), eval, lm)?;
    let cov = covariance(&out.jacobian, out.cost)?;

    let mut params = BTreeMap::new();
    let mut std_errs = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        params.insert(name.to_string(), out.x[i]);
        std_errs.insert(name.to_string(), cov[(i, i)].max(0.0).sqrt());
    }
    let mut fixed = Vec::new();
    if !opts.fit_jitter {
        params.insert(IRF_FWHM.into(), irf_fwhm);
        std_errs.insert(IRF_FWHM.into(), 0.0);
        fixed.push(IRF_FWHM.to_string());
    }
    if exciton {
        params.insert(THETA.into(), theta);
        std_errs.insert(THETA.into(), 0.0);
        fixed.push(THETA.to_string());
    }
    Ok(FitResult {
        kind,
        params,
        std_errs,
        fixed,
        reduced_chi2: out.cost / (n - np) as f64,
        converged: out.converged,
        n_iter: out.n_iter,
    })
}

/// Residual vector and Jacobian of the weighted fit objective at `params`,
/// exposed for derivative checks.
pub fn fit_residuals(
    trace: &DecayTrace,
    params: &BTreeMap<String, f64>,
    fit_jitter: bool,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let get = |k: &str| {
        params
            .get(k)
            .copied()
            .ok_or_else(|| Error::Precondition(format!("missing parameter `{k}`")))
    };
    let fwhm = get(IRF_FWHM)?;
    let mut ev = Evaluator::new(
        trace,
        trace.model_kind,
        fwhm,
        params.get(THETA).copied().unwrap_or(FRAC_PI_4),
        true,
    )?;
    ev.fit_jitter = fit_jitter;
    let exciton = trace.model_kind == TransitionKind::Exciton;
    let p = ShapeParams {
        t0: get(T0)?,
        tau: get(TAU)?,
        delta: if exciton { get(DELTA_FSS)? } else { 0.0 },
        fwhm,
    };
    let (a, bg) = (get(AMPLITUDE)?, get(BACKGROUND)?);
    let s = ev.shape(&p, true);
    let y = &trace.counts;
    let inv: Vec<f64> = y.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect();
    let r = (0..y.len()).map(|i| (a * s.value[i] + bg - y[i]) * inv[i]).collect();
    let scaled = |v: &[f64], k: f64| v.iter().zip(&inv).map(|(d, w)| k * d * w).collect::<Vec<_>>();
    let mut cols = vec![scaled(&s.value, 1.0), inv.clone(), scaled(&s.d_t0, a), scaled(&s.d_tau, a)];
    if exciton {
        cols.push(scaled(&s.d_delta, a));
    }
    if fit_jitter {
        cols.push(scaled(&s.d_fwhm, a));
    }
    Ok((r, cols))
}
