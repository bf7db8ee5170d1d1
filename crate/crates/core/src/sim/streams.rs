use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{Domain, RngSpec, PULSE_CHUNK};
use super::sampler::EmissionSampler;
use crate::dynamics::fwhm_to_sigma;
use crate::error::{Error, Result};
use crate::model::{SetupParams, SourceParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    QdFirst,
    QdReexcite,
    Laser,
    Dark,
}

/// A photon that reached the first lens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonEvent {
    pub pulse_index: u64,
    /// Delay after the pulse (ps). Negative only for leaked laser light.
    pub emit_time: f64,
    pub origin: Origin,
}

/// A detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub channel: u8,
    /// Global time (ps), rounded to the integer picosecond.
    pub abs_time: i64,
    pub origin: Origin,
}

/// Events of a run of `n_pulses` excitation pulses, sorted by pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pub n_pulses: u64,
    pub events: Vec<PhotonEvent>,
}

impl PulseTrain {
    pub fn count(&self, origin: Origin) -> usize {
        self.events.iter().filter(|e| e.origin == origin).count()
    }
}

/// Two-photon coincidence ratio of an emitter that re-emits with probability
/// `p_re` per pulse and whose photons are collected independently.
pub fn expected_g2(p_reexcite: f64) -> f64 {
    2.0 * p_reexcite / (1.0 + p_reexcite).powi(2)
}

/// Inverse of [`expected_g2`] on its increasing branch, `g2 ∈ [0, 0.5]`.
pub fn reexcitation_for_g2(g2: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&g2) {
        return Err(Error::Domain(format!("g2 = {g2} is outside [0, 0.5]")));
    }
    Ok(g2 / ((1.0 - g2) + (1.0 - 2.0 * g2).sqrt()))
}

/// Per-pulse probability that two QD photons reach the first lens for a source
/// of first-lens brightness `brightness` whose HBT histogram shows `g2`.
pub fn p_two_photon_for_g2(g2: f64, brightness: f64) -> Result<f64> {
    Ok(reexcitation_for_g2(g2)? * brightness * brightness)
}

fn chunk_count(n_pulses: u64) -> u64 {
    n_pulses.div_ceil(PULSE_CHUNK)
}

/// Generates first-lens photon events for `n_pulses` pulses.
///
/// The emitter fires once per pulse and, with probability
/// `p_two_photon / B²`, fires again after a fresh decay. Each photon then
/// reaches the first lens independently with probability `B`, so the
/// expected number of first photons per pulse is `B` and the probability of
/// two collected QD photons is `p_two_photon`. Leaked laser photons are
/// Poissonian with mean `laser_leak_per_pulse`.
pub fn simulate_pulse_train(
    spec: &RngSpec,
    source: &SourceParams,
    setup: &SetupParams,
    n_pulses: u64,
) -> Result<PulseTrain> {
    if n_pulses == 0 {
        return Err(Error::Precondition("n_pulses must be positive".into()));
    }
    let b = source.brightness_first_lens;
    let p2 = source.p_two_photon;
    if !(0.0..=1.0).contains(&b) || !(p2 >= 0.0) || p2 > b {
        return Err(Error::InvalidConfiguration(format!(
            "p_two_photon = {p2} exceeds brightness {b}"
        )));
    }
    let p_re = if p2 > 0.0 { p2 / (b * b) } else { 0.0 };
    if p_re > 1.0 {
        return Err(Error::InvalidConfiguration(format!(
            "p_two_photon = {p2} needs a re-excitation probability {p_re:.3} > 1 at brightness {b}"
        )));
    }
    let leak = setup.laser_leak_per_pulse;
    if !(leak >= 0.0) {
        return Err(Error::InvalidConfiguration(format!("laser_leak_per_pulse = {leak}")));
    }
    let emits = b > 0.0;
    let sampler = if emits {
        Some(EmissionSampler::new(&source.transition)?)
    } else {
        None
    };
    let laser_count = if leak > 0.0 {
        Some(Poisson::new(leak).map_err(|e| Error::InvalidConfiguration(e.to_string()))?)
    } else {
        None
    };
    let laser_time = Normal::new(0.0, fwhm_to_sigma(setup.pulse_fwhm))
        .map_err(|e| Error::InvalidConfiguration(e.to_string()))?;

    let chunks: Vec<Vec<PhotonEvent>> = (0..chunk_count(n_pulses))
        .into_par_iter()
        .map(|c| {
            let mut rng = spec.substream(Domain::Emission, c);
            let mut out = Vec::new();
            let end = ((c + 1) * PULSE_CHUNK).min(n_pulses);
            for k in c * PULSE_CHUNK..end {
                if let Some(s) = &sampler {
                    let first = rng.random::<f64>() < b;
                    let again = p_re > 0.0 && rng.random::<f64>() < p_re;
                    let second = again && rng.random::<f64>() < b;
                    if first || second {
                        let t1 = s.sample(&mut rng);
                        if first {
                            out.push(PhotonEvent { pulse_index: k, emit_time: t1, origin: Origin::QdFirst });
                        }
                        if second {
                            let t2 = t1 + s.sample(&mut rng);
                            out.push(PhotonEvent { pulse_index: k, emit_time: t2, origin: Origin::QdReexcite });
                        }
                    }
                }
                if let Some(p) = &laser_count {
                    let n = p.sample(&mut rng) as u64;
                    for _ in 0..n {
                        out.push(PhotonEvent {
                            pulse_index: k,
                            emit_time: laser_time.sample(&mut rng),
                            origin: Origin::Laser,
                        });
                    }
                }
            }
            out
        })
        .collect();
    Ok(PulseTrain {
        n_pulses,
        events: chunks.concat(),
    })
}

/// Index range of `events` belonging to pulse chunk `c`.
fn chunk_bounds(events: &[PhotonEvent], c: u64) -> (usize, usize) {
    let lo = events.partition_point(|e| e.pulse_index < c * PULSE_CHUNK);
    let hi = events.partition_point(|e| e.pulse_index < (c + 1) * PULSE_CHUNK);
    (lo, hi)
}

fn check_sorted(events: &[PhotonEvent]) -> Result<()> {
    if events.windows(2).any(|w| w[1].pulse_index < w[0].pulse_index) {
        return Err(Error::Precondition("events are not sorted by pulse".into()));
    }
    Ok(())
}

struct Detector {
    eta: f64,
    jitter: Normal<f64>,
    period: f64,
}

impl Detector {
    fn new(setup: &SetupParams) -> Self {
        Self {
            eta: setup.detection_efficiency(),
            jitter: Normal::new(0.0, fwhm_to_sigma(setup.jitter_fwhm)).expect("finite jitter"),
            period: setup.rep_period(),
        }
    }

    /// Thins, jitters and time-stamps a photon that left the splitter at
    /// `slot_time` (ps) on `channel`.
    fn detect(&self, rng: &mut ChaCha8Rng, channel: u8, slot_time: f64, origin: Origin, out: &mut [Vec<ClickRecord>; 2]) {
        if rng.random::<f64>() >= self.eta {
            return;
        }
        let t = slot_time + self.jitter.sample(rng);
        out[channel as usize].push(ClickRecord {
            channel,
            abs_time: t.round() as i64,
            origin,
        });
    }

    fn dark(&self, rng: &mut ChaCha8Rng, rate: f64, c: u64, n_pulses: u64, out: &mut [Vec<ClickRecord>; 2]) {
        if rate <= 0.0 {
            return;
        }
        let t0 = (c * PULSE_CHUNK) as f64 * self.period;
        let span = (((c + 1) * PULSE_CHUNK).min(n_pulses) - c * PULSE_CHUNK) as f64 * self.period;
        let mean = rate * 1e-12 * span;
        let Ok(poisson) = Poisson::new(mean) else {
            return;
        };
        for channel in 0..2u8 {
            let n = poisson.sample(rng) as u64;
            for _ in 0..n {
                let t = t0 + rng.random::<f64>() * span;
                out[channel as usize].push(ClickRecord {
                    channel,
                    abs_time: t.round() as i64,
                    origin: Origin::Dark,
                });
            }
        }
    }
}

fn merge(chunks: Vec<[Vec<ClickRecord>; 2]>) -> (Vec<ClickRecord>, Vec<ClickRecord>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for [x, y] in chunks {
        a.extend(x);
        b.extend(y);
    }
    a.sort_by_key(|r| r.abs_time);
    b.sort_by_key(|r| r.abs_time);
    (a, b)
}

/// Click streams of a Hanbury Brown-Twiss setup: one balanced splitter and
/// two detectors.
pub fn hbt_streams(
    spec: &RngSpec,
    train: &PulseTrain,
    setup: &SetupParams,
) -> Result<(Vec<ClickRecord>, Vec<ClickRecord>)> {
    check_sorted(&train.events)?;
    let det = Detector::new(setup);
    let chunks = (0..chunk_count(train.n_pulses))
        .into_par_iter()
        .map(|c| {
            let mut rng = spec.substream(Domain::HbtRoute, c);
            let mut out = [Vec::new(), Vec::new()];
            let (lo, hi) = chunk_bounds(&train.events, c);
            for e in &train.events[lo..hi] {
                let channel = rng.random::<bool>() as u8;
                let t = e.pulse_index as f64 * det.period + e.emit_time;
                det.detect(&mut rng, channel, t, e.origin, &mut out);
            }
            let mut dark_rng = spec.substream(Domain::HbtDark, c);
            det.dark(&mut dark_rng, setup.dark_rate, c, train.n_pulses, &mut out);
            out
        })
        .collect();
    Ok(merge(chunks))
}

/// Click streams of an unbalanced Mach-Zehnder HOM setup whose arm delay is
/// one repetition period.
///
/// Each photon takes the long arm with probability 1/2. A first photon that
/// took the long arm from pulse `k` meets the first photon of pulse `k + 1`
/// that took the short arm; the pair leaves by one common random port with
/// probability `overlap` and by independent ports otherwise. Every other
/// photon leaves by a random port.
pub fn hom_streams(
    spec: &RngSpec,
    train: &PulseTrain,
    setup: &SetupParams,
    overlap: f64,
) -> Result<(Vec<ClickRecord>, Vec<ClickRecord>)> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::Precondition(format!("overlap {overlap} is outside [0, 1]")));
    }
    let period = setup.rep_period();
    if (setup.hom_delay() - period).abs() > 1e-6 * period {
        return Err(Error::Precondition(format!(
            "hom_delay {} ps differs from the repetition period {period} ps",
            setup.hom_delay()
        )));
    }
    check_sorted(&train.events)?;
    let events = &train.events;
    let n_chunks = chunk_count(train.n_pulses);

    let long: Vec<bool> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = spec.substream(Domain::HomArm, c);
            let (lo, hi) = chunk_bounds(events, c);
            (lo..hi).map(move |_| rng.random::<bool>())
        })
        .collect();

    // index of the first photon of a pulse, if one was collected
    let first_of = |pulse: u64| -> Option<usize> {
        let lo = events.partition_point(|e| e.pulse_index < pulse);
        events[lo..]
            .iter()
            .take_while(|e| e.pulse_index == pulse)
            .position(|e| e.origin == Origin::QdFirst)
            .map(|i| lo + i)
    };

    let det = Detector::new(setup);
    let chunks = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = spec.substream(Domain::HomRoute, c);
            let mut out = [Vec::new(), Vec::new()];
            let (lo, hi) = chunk_bounds(events, c);
            for i in lo..hi {
                let e = &events[i];
                let slot = |j: usize| {
                    let ev = &events[j];
                    (ev.pulse_index + long[j] as u64) as f64 * period + ev.emit_time
                };
                if e.origin == Origin::QdFirst {
                    if long[i] {
                        if first_of(e.pulse_index + 1).is_some_and(|j| !long[j]) {
                            // routed together with its partner
                            continue;
                        }
                    } else if let Some(j) = e.pulse_index.checked_sub(1).and_then(first_of).filter(|&j| long[j]) {
                        let (ci, cj) = if rng.random::<f64>() < overlap {
                            let port = rng.random::<bool>() as u8;
                            (port, port)
                        } else {
                            (rng.random::<bool>() as u8, rng.random::<bool>() as u8)
                        };
                        det.detect(&mut rng, cj, slot(j), events[j].origin, &mut out);
                        det.detect(&mut rng, ci, slot(i), e.origin, &mut out);
                        continue;
                    }
                }
                let channel = rng.random::<bool>() as u8;
                det.detect(&mut rng, channel, slot(i), e.origin, &mut out);
            }
            let mut dark_rng = spec.substream(Domain::HomDark, c);
            det.dark(&mut dark_rng, setup.dark_rate, c, train.n_pulses, &mut out);
            out
        })
        .collect();
    Ok(merge(chunks))
}

/// Draws `counts` detected lifetime events (emission delay plus detector
/// jitter) and histograms them into `bins` bins of width `bin_width` starting
/// at `start` (ps). Events outside the window are dropped.
pub fn acquire_lifetime(
    spec: &RngSpec,
    source: &SourceParams,
    setup: &SetupParams,
    counts: u64,
    start: f64,
    bin_width: f64,
    bins: usize,
) -> Result<Vec<f64>> {
    if !(bin_width > 0.0) || bins == 0 {
        return Err(Error::Precondition("lifetime histogram needs bins and a positive bin width".into()));
    }
    let sampler = EmissionSampler::new(&source.transition)?;
    let jitter = Normal::new(0.0, fwhm_to_sigma(setup.jitter_fwhm))
        .map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
    let partial: Vec<Vec<f64>> = (0..counts.div_ceil(PULSE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = spec.substream(Domain::Lifetime, c);
            let mut h = vec![0.0; bins];
            let n = ((c + 1) * PULSE_CHUNK).min(counts) - c * PULSE_CHUNK;
            for _ in 0..n {
                let t = sampler.sample(&mut rng) + jitter.sample(&mut rng);
                let k = ((t - start) / bin_width).floor();
                if k >= 0.0 && (k as usize) < bins {
                    h[k as usize] += 1.0;
                }
            }
            h
        })
        .collect();
    let mut hist = vec![0.0; bins];
    for h in partial {
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
    }
    Ok(hist)
}
