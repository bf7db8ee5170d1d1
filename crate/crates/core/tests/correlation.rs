use proptest::prelude::*;
use rand::Rng;
use spsbench::correlation::*;
use spsbench::model::{SetupParams, SourceParams, Transition, TrionParams};
use spsbench::sim::*;
use spsbench::Error;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn trion(b: f64, p2: f64) -> SourceParams {
    SourceParams {
        label: "t".into(),
        transition: Transition::Trion(TrionParams { tau: 150.0 }),
        brightness_first_lens: b,
        p_two_photon: p2,
        dephasing: 0.0,
        wavelength: 925.0,
    }
}

fn ideal() -> SetupParams {
    SetupParams {
        eta_setup: 1.0,
        eta_det: 1.0,
        ..SetupParams::default()
    }
}

fn clicks(times: &[i64], channel: u8) -> Vec<ClickRecord> {
    times
        .iter()
        .map(|&abs_time| ClickRecord {
            channel,
            abs_time,
            origin: Origin::QdFirst,
        })
        .collect()
}

fn hbt_hist(src: &SourceParams, setup: &SetupParams, n: u64, seed: u64) -> CorrelationHistogram {
    let spec = RngSpec::new(seed, 0);
    let train = simulate_pulse_train(&spec, src, setup, n).unwrap();
    let (a, b) = hbt_streams(&spec, &train, setup).unwrap();
    let t = setup.rep_period();
    build_histogram(&a, &b, 16.0, 10.5 * t, t).unwrap()
}

#[test]
fn identical_streams_pile_up_at_zero_delay() {
    let times: Vec<i64> = (0..2000).map(|i| i * 1_000_000 + (i * 37) % 911).collect();
    let h = build_histogram(&clicks(&times, 0), &clicks(&times, 1), 4.0, 10_000.0, 1000.0).unwrap();
    let zero = h.counts.len() / 2;
    assert_eq!(h.counts[zero], 2000);
    assert_eq!(h.total(), 2000);
}

#[test]
fn unsorted_streams_are_rejected() {
    let a = clicks(&[5, 3], 0);
    let b = clicks(&[1, 2], 1);
    assert!(matches!(build_histogram(&a, &b, 4.0, 10_000.0, 1000.0), Err(Error::Precondition(_))));
    assert!(matches!(build_histogram(&b, &a, 4.0, 10_000.0, 1000.0), Err(Error::Precondition(_))));
}

#[test]
fn independent_poisson_streams_give_a_flat_histogram() {
    let mut rng = RngSpec::new(77, 0).rng();
    let mut stream = |rate_per_ps: f64, len: f64| {
        let mut t = 0.0;
        let mut out = Vec::new();
        loop {
            t += -(1.0 - rng.random::<f64>()).ln() / rate_per_ps;
            if t > len {
                break out;
            }
            out.push(t as i64);
        }
    };
    let len = 2.0e9;
    let a = clicks(&stream(1e-4, len), 0);
    let b = clicks(&stream(1e-4, len), 1);
    let h = build_histogram(&a, &b, 1000.0, 100_000.0, 10_000.0).unwrap();
    // drop the two edge bins, which are only half inside ±max_delay
    let inner = &h.counts[1..h.counts.len() - 1];
    let mean = inner.iter().sum::<u64>() as f64 / inner.len() as f64;
    let stat: f64 = inner.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
    let p = 1.0 - ChiSquared::new((inner.len() - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn single_photons_leave_the_zero_peak_empty() {
    let setup = SetupParams::default();
    let h = hbt_hist(&trion(0.5, 0.0), &setup, 1_000_000, 1);
    let t = setup.rep_period();
    let peaks = integrate_peaks(&h, DEFAULT_WINDOW, &(-10..=10).collect::<Vec<_>>()).unwrap();
    assert_eq!(peaks[10].area, 0);
    // each side peak holds its coincidences around k·T
    for p in peaks.iter().filter(|p| p.peak_index != 0) {
        assert!(p.area > 0);
        let lo = ((p.peak_index as f64 * t - 400.0) / 16.0) as i64 + (h.counts.len() / 2) as i64;
        let near: u64 = h.counts[lo as usize..(lo + 50) as usize].iter().sum();
        assert!(near as f64 > 0.9 * p.area as f64);
    }
    // side peaks agree within counting statistics
    let sides: Vec<f64> = peaks.iter().filter(|p| p.peak_index != 0).map(|p| p.area as f64).collect();
    let mean = sides.iter().sum::<f64>() / sides.len() as f64;
    let stat: f64 = sides.iter().map(|a| (a - mean).powi(2) / mean).sum();
    let p = 1.0 - ChiSquared::new((sides.len() - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.001, "side peak spread χ² = {stat}");
}

#[test]
fn g2_of_ideal_single_photons_is_zero() {
    let h = hbt_hist(&trion(0.13, 0.0), &ideal(), 1_000_000, 2);
    let g = g2_zero(&h, DEFAULT_WINDOW, &hbt_side_peaks()).unwrap();
    assert!(g.value <= 3.0 * g.std_err.max(1e-12), "{g:?}");
}

#[test]
fn g2_of_coherent_light_is_one() {
    let setup = SetupParams {
        laser_leak_per_pulse: 0.5,
        ..ideal()
    };
    let h = hbt_hist(&trion(0.0, 0.0), &setup, 1_000_000, 3);
    let g = g2_zero(&h, DEFAULT_WINDOW, &hbt_side_peaks()).unwrap();
    assert!((g.value - 1.0).abs() < 0.02, "{g:?}");
}

#[test]
fn g2_recovers_the_two_photon_fraction() {
    let b = 0.13;
    let p2 = p_two_photon_for_g2(0.0237, b).unwrap();
    // oracle: 2·p2/μ² with μ the mean photon number per pulse
    let p_re = p2 / (b * b);
    let mu = b * (1.0 + p_re);
    assert!((2.0 * p2 / (mu * mu) - 0.0237).abs() < 1e-12);
    // at B = 0.13 one million pulses give a standard error of about 0.0026,
    // so use four million to make ±0.005 a 4σ band
    let h = hbt_hist(&trion(b, p2), &ideal(), 4_000_000, 4);
    let g = g2_zero(&h, DEFAULT_WINDOW, &hbt_side_peaks()).unwrap();
    assert!((g.value - 0.0237).abs() < 0.005, "{g:?}");
}

#[test]
fn g2_spread_scales_as_inverse_root_n() {
    let src = trion(0.5, p_two_photon_for_g2(0.05, 0.5).unwrap());
    let setup = ideal();
    let sizes = [10_000u64, 100_000, 1_000_000];
    let seeds = 60;
    let mut log_sd = Vec::new();
    for &n in &sizes {
        let vals: Vec<f64> = (0..seeds)
            .map(|s| {
                let h = hbt_hist(&src, &setup, n, 1000 + s);
                g2_zero(&h, DEFAULT_WINDOW, &hbt_side_peaks()).unwrap().value
            })
            .collect();
        let m = vals.iter().sum::<f64>() / seeds as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (seeds - 1) as f64).sqrt();
        log_sd.push(sd.log10());
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).log10()).collect();
    let xm = xs.iter().sum::<f64>() / 3.0;
    let ym = log_sd.iter().sum::<f64>() / 3.0;
    let slope = xs.iter().zip(&log_sd).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
        / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
}

fn hom_hist(src: &SourceParams, setup: &SetupParams, overlap: f64, n: u64, seed: u64) -> CorrelationHistogram {
    let spec = RngSpec::new(seed, 0);
    let train = simulate_pulse_train(&spec, src, setup, n).unwrap();
    let (a, b) = hom_streams(&spec, &train, setup, overlap).unwrap();
    let t = setup.rep_period();
    build_histogram(&a, &b, 16.0, 10.5 * t, t).unwrap()
}

#[test]
fn distinguishable_photons_have_zero_visibility() {
    let h = hom_hist(&trion(0.5, 0.0), &ideal(), 0.0, 1_000_000, 5);
    let v = hom_visibility(&h, DEFAULT_WINDOW, &default_side_peaks()).unwrap();
    assert!((v.a0 - 0.5).abs() < 3.0 * v.std_err / 2.0, "{v:?}");
    assert!(v.value.abs() < 3.0 * v.std_err, "{v:?}");
}

#[test]
fn overlap_round_trips_through_the_hom_chain() {
    for (m, seed) in [(0.9, 6), (0.5, 7)] {
        let h = hom_hist(&trion(0.5, 0.0), &ideal(), m, 1_000_000, seed);
        let v = hom_visibility(&h, DEFAULT_WINDOW, &default_side_peaks()).unwrap();
        let c = corrected_overlap(v.value, 0.0).unwrap();
        assert!((c.value - m).abs() < 3.0 * v.std_err, "{m}: {v:?}");
    }
}

fn brute_force(a: &[i64], b: &[i64], bw: f64, max_delay: f64) -> Vec<u64> {
    let half = (max_delay / bw).floor() as i64;
    let mut h = vec![0u64; (2 * half + 1) as usize];
    for &x in a {
        for &y in b {
            let d = y - x;
            if (d as f64).abs() <= max_delay {
                let k = (d as f64 / bw).round() as i64;
                if k.abs() <= half {
                    h[(k + half) as usize] += 1;
                }
            }
        }
    }
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweep_matches_all_pairs(
        mut a in prop::collection::vec(0i64..200_000, 0..300),
        mut b in prop::collection::vec(0i64..200_000, 0..300),
        bw in 1.0f64..50.0,
        max_delay in 10_000.0f64..40_000.5,
    ) {
        a.sort_unstable();
        b.sort_unstable();
        let h = build_histogram(&clicks(&a, 0), &clicks(&b, 1), bw, max_delay, 1000.0).unwrap();
        prop_assert_eq!(h.counts, brute_force(&a, &b, bw, max_delay));
    }

    #[test]
    fn estimators_ignore_common_time_shifts(shift in -5_000_000i64..5_000_000, seed in 0u64..4) {
        let setup = SetupParams::default();
        let src = trion(0.5, 0.01);
        let spec = RngSpec::new(seed, 9);
        let train = simulate_pulse_train(&spec, &src, &setup, 40_000).unwrap();
        let (a, b) = hbt_streams(&spec, &train, &setup).unwrap();
        let moved = |s: &[ClickRecord]| s.iter().map(|c| ClickRecord { abs_time: c.abs_time + shift, ..*c }).collect::<Vec<_>>();
        let t = setup.rep_period();
        let h0 = build_histogram(&a, &b, 16.0, 10.5 * t, t).unwrap();
        let h1 = build_histogram(&moved(&a), &moved(&b), 16.0, 10.5 * t, t).unwrap();
        let side = hbt_side_peaks();
        prop_assert_eq!(g2_zero(&h0, DEFAULT_WINDOW, &side).unwrap(), g2_zero(&h1, DEFAULT_WINDOW, &side).unwrap());
        prop_assert_eq!(hom_visibility(&h0, DEFAULT_WINDOW, &side).unwrap(), hom_visibility(&h1, DEFAULT_WINDOW, &side).unwrap());
    }

    #[test]
    fn corrected_overlap_is_monotone_and_never_below_raw(
        v in -1.0f64..1.0,
        g in 0.0f64..0.9,
        dv in 0.0f64..0.1,
        dg in 0.0f64..0.05,
    ) {
        let m = corrected_overlap(v, g).unwrap();
        prop_assert!(m.value >= v.min(1.0) - 1e-15);
        let mv = corrected_overlap((v + dv).min(1.0), g).unwrap();
        let mg = corrected_overlap(v, g + dg).unwrap();
        prop_assert!(mv.value >= m.value - 1e-15);
        prop_assert!(mg.value >= m.value - 1e-15);
    }
}

