//! Coincidence histograms and the purity, visibility and brightness estimators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SetupParams;
use crate::sim::ClickRecord;

/// Default half-width of a peak integration window (ps).
pub const DEFAULT_WINDOW: f64 = 2000.0;

/// Histograms must reach at least this many repetition periods on each side.
pub const MIN_SPAN_PERIODS: f64 = 10.0;

/// Side peaks `±2..±6`, the default normalization set.
pub fn default_side_peaks() -> Vec<i64> {
    (2..=6).flat_map(|k| [-k, k]).collect()
}

/// Side peaks `±1..±6`, usable for HBT where the first side peaks are not
/// affected by interference.
pub fn hbt_side_peaks() -> Vec<i64> {
    (1..=6).flat_map(|k| [-k, k]).collect()
}

/// Coincidence counts versus delay `t1 - t0`, with bins centered on
/// multiples of `bin_width` symmetric about zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width: f64,
    pub rep_period: f64,
    pub delays: Vec<f64>,
    pub counts: Vec<u64>,
}

impl CorrelationHistogram {
    /// Reassembles a histogram, checking that the delays are uniform, centered
    /// and wide enough.
    pub fn from_parts(bin_width: f64, rep_period: f64, delays: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if !(bin_width > 0.0) || !(rep_period > 0.0) {
            return Err(Error::Precondition("bin width and repetition period must be positive".into()));
        }
        if delays.len() != counts.len() || delays.len() % 2 == 0 {
            return Err(Error::Precondition(
                "histogram needs an odd number of bins with one count per delay".into(),
            ));
        }
        let half = delays.len() / 2;
        for (i, d) in delays.iter().enumerate() {
            let want = (i as f64 - half as f64) * bin_width;
            if (d - want).abs() > 1e-6 * bin_width.max(1.0) {
                return Err(Error::Precondition(format!(
                    "bin {i} is centered at {d} ps, expected {want} ps"
                )));
            }
        }
        let hist = Self {
            bin_width,
            rep_period,
            delays,
            counts,
        };
        hist.check_span()?;
        Ok(hist)
    }

    fn check_span(&self) -> Result<()> {
        if self.max_delay() + 0.5 * self.bin_width < MIN_SPAN_PERIODS * self.rep_period {
            return Err(Error::Precondition(format!(
                "histogram spans ±{} ps, less than {MIN_SPAN_PERIODS} repetition periods",
                self.max_delay()
            )));
        }
        Ok(())
    }

    fn half(&self) -> usize {
        self.counts.len() / 2
    }

    /// Largest bin center (ps).
    pub fn max_delay(&self) -> f64 {
        self.half() as f64 * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn check_time_sorted(clicks: &[ClickRecord], name: &str) -> Result<()> {
    if clicks.windows(2).any(|w| w[1].abs_time < w[0].abs_time) {
        return Err(Error::Precondition(format!("{name} is not sorted by time")));
    }
    Ok(())
}

/// Histogram of all cross-channel delays `t1 - t0` with `|t1 - t0| ≤ max_delay`.
///
/// Runs a two-pointer sweep, so the cost is linear in the number of clicks
/// plus the number of counted pairs. `max_delay` must cover at least
/// [`MIN_SPAN_PERIODS`] repetition periods.
pub fn build_histogram(
    clicks0: &[ClickRecord],
    clicks1: &[ClickRecord],
    bin_width: f64,
    max_delay: f64,
    rep_period: f64,
) -> Result<CorrelationHistogram> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::Precondition(format!("bin width {bin_width} must be positive")));
    }
    if !(max_delay >= MIN_SPAN_PERIODS * rep_period) || !(rep_period > 0.0) {
        return Err(Error::Precondition(format!(
            "max delay {max_delay} ps must cover {MIN_SPAN_PERIODS} repetition periods of {rep_period} ps"
        )));
    }
    check_time_sorted(clicks0, "channel 0")?;
    check_time_sorted(clicks1, "channel 1")?;
    let half = (max_delay / bin_width).floor() as usize;
    let nbins = 2 * half + 1;
    let reach = max_delay.floor() as i64;

    const SHARD: usize = 1 << 14;
    let counts = clicks0
        .par_chunks(SHARD)
        .map(|shard| {
            let mut h = vec![0u64; nbins];
            let Some(first) = shard.first() else {
                return h;
            };
            let mut lo = clicks1.partition_point(|c| c.abs_time < first.abs_time - reach);
            for c0 in shard {
                while lo < clicks1.len() && clicks1[lo].abs_time < c0.abs_time - reach {
                    lo += 1;
                }
                for c1 in &clicks1[lo..] {
                    let d = c1.abs_time - c0.abs_time;
                    if d > reach {
                        break;
                    }
                    let k = (d as f64 / bin_width).round() as i64;
                    if k.unsigned_abs() as usize <= half {
                        h[(k + half as i64) as usize] += 1;
                    }
                }
            }
            h
        })
        .reduce(
            || vec![0u64; nbins],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let delays = (0..nbins).map(|i| (i as f64 - half as f64) * bin_width).collect();
    Ok(CorrelationHistogram {
        bin_width,
        rep_period,
        delays,
        counts,
    })
}

/// Coincidences summed around one peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakIntegral {
    pub peak_index: i64,
    pub area: u64,
    pub window: f64,
}

/// Sums the bins whose centers fall in `[k·T - window, k·T + window)` for
/// each requested peak index `k`.
pub fn integrate_peaks(hist: &CorrelationHistogram, window: f64, peak_indices: &[i64]) -> Result<Vec<PeakIntegral>> {
    if !(window > 0.0) || window > 0.5 * hist.rep_period {
        return Err(Error::Precondition(format!(
            "window {window} ps must be positive and at most half the repetition period"
        )));
    }
    let edge = hist.max_delay() + 0.5 * hist.bin_width;
    peak_indices
        .iter()
        .map(|&k| {
            let center = k as f64 * hist.rep_period;
            if center - window < -edge || center + window > edge {
                return Err(Error::Range(format!(
                    "peak {k} at {center} ps ± {window} ps lies outside the histogram span ±{edge} ps"
                )));
            }
            let lo = ((center - window) / hist.bin_width).ceil() as i64;
            let mut hi = ((center + window) / hist.bin_width).ceil() as i64 - 1;
            let half = hist.half() as i64;
            hi = hi.min(half);
            let area = (lo.max(-half)..=hi)
                .map(|b| hist.counts[(b + half) as usize])
                .sum();
            Ok(PeakIntegral {
                peak_index: k,
                area,
                window,
            })
        })
        .collect()
}

/// Zero-delay peak area normalized by the mean side-peak area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Result {
    pub value: f64,
    pub std_err: f64,
    pub zero_area: u64,
    pub side_mean: f64,
    pub n_side_peaks: usize,
}

/// Raw two-photon interference visibility `1 - 2·A₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomResult {
    pub value: f64,
    pub std_err: f64,
    /// Normalized zero-delay area `A₀`.
    pub a0: f64,
    pub zero_area: u64,
    pub side_mean: f64,
    pub n_side_peaks: usize,
}

fn normalized_zero_peak(hist: &CorrelationHistogram, window: f64, side_peaks: &[i64]) -> Result<G2Result> {
    if side_peaks.is_empty() || side_peaks.contains(&0) {
        return Err(Error::Precondition("side peaks must be non-empty and exclude 0".into()));
    }
    let zero = integrate_peaks(hist, window, &[0])?[0].area;
    let sides = integrate_peaks(hist, window, side_peaks)?;
    let n = sides.len() as f64;
    let side_sum: u64 = sides.iter().map(|p| p.area).sum();
    if side_sum == 0 {
        return Err(Error::UndefinedNormalization("side peaks hold no coincidences".into()));
    }
    let s = side_sum as f64 / n;
    let a0 = zero as f64;
    let value = a0 / s;
    let std_err = (a0 / (s * s) + a0 * a0 * side_sum as f64 / (n * n * s.powi(4))).sqrt();
    Ok(G2Result {
        value,
        std_err,
        zero_area: zero,
        side_mean: s,
        n_side_peaks: sides.len(),
    })
}

/// Second-order correlation at zero delay with Poisson error propagation.
pub fn g2_zero(hist: &CorrelationHistogram, window: f64, side_peaks: &[i64]) -> Result<G2Result> {
    normalized_zero_peak(hist, window, side_peaks)
}

/// Raw HOM visibility from the normalized zero-delay area.
pub fn hom_visibility(hist: &CorrelationHistogram, window: f64, side_peaks: &[i64]) -> Result<HomResult> {
    let r = normalized_zero_peak(hist, window, side_peaks)?;
    Ok(HomResult {
        value: 1.0 - 2.0 * r.value,
        std_err: 2.0 * r.std_err,
        a0: r.value,
        zero_area: r.zero_area,
        side_mean: r.side_mean,
        n_side_peaks: r.n_side_peaks,
    })
}

/// Mean wavepacket overlap after removing the multiphoton contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedOverlap {
    pub value: f64,
    /// The unclamped estimate exceeded 1.
    pub clamped: bool,
}

/// `M = (V + g²)/(1 - g²)`, clamped to at most 1.
pub fn corrected_overlap(v_raw: f64, g2: f64) -> Result<CorrectedOverlap> {
    if !(0.0..1.0).contains(&g2) {
        return Err(Error::Domain(format!("g2 = {g2} must lie in [0, 1)")));
    }
    if !(v_raw <= 1.0) {
        return Err(Error::Domain(format!("raw visibility {v_raw} exceeds 1")));
    }
    let m = (v_raw + g2) / (1.0 - g2);
    Ok(CorrectedOverlap {
        value: m.min(1.0),
        clamped: m > 1.0,
    })
}

/// First-order uncertainty of [`corrected_overlap`] for independent errors
/// on the visibility and on `g²`.
pub fn corrected_overlap_std_err(v_raw: f64, v_err: f64, g2: f64, g2_err: f64) -> f64 {
    let dv = 1.0 / (1.0 - g2);
    let dg = (1.0 + v_raw) / (1.0 - g2).powi(2);
    ((dv * v_err).powi(2) + (dg * g2_err).powi(2)).sqrt()
}

/// Photon flux referred back through the detection chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Brightness {
    /// Photon rate at the output of the collection fiber (counts/s).
    pub fibered_rate: f64,
    /// Photons per pulse at the fiber output.
    pub fibered: f64,
    /// Photons per pulse at the first lens.
    pub first_lens: f64,
}

/// Converts a detected count rate (counts/s) into fibered and first-lens
/// brightness.
pub fn brightness_chain(detected_rate: f64, setup: &SetupParams) -> Result<Brightness> {
    if !(detected_rate >= 0.0) || !detected_rate.is_finite() {
        return Err(Error::Domain(format!("detected rate {detected_rate} must be finite and >= 0")));
    }
    for (name, eta) in [("eta_det", setup.eta_det), ("eta_setup", setup.eta_setup)] {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Domain(format!("{name} = {eta} must lie in (0, 1]")));
        }
    }
    if !(setup.rep_rate > 0.0) {
        return Err(Error::Domain(format!("rep_rate = {} must be positive", setup.rep_rate)));
    }
    let rep_hz = setup.rep_rate * 1.0e6;
    let fibered_rate = detected_rate / setup.eta_det;
    Ok(Brightness {
        fibered_rate,
        fibered: fibered_rate / rep_hz,
        // one division, so a rate built as rep·η_det·η_setup·B maps back to B exactly
        first_lens: detected_rate / (rep_hz * setup.eta_det * setup.eta_setup),
    })
}
