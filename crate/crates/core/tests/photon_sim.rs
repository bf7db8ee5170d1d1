use proptest::prelude::*;
use spsbench::model::{ExcitonParams, SetupParams, SourceParams, Transition, TrionParams};
use spsbench::sim::*;
use spsbench::Error;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::f64::consts::FRAC_PI_4;

const HBAR: f64 = 658.2119569;

fn s7() -> ExcitonParams {
    ExcitonParams::new(252.0, 8.58, FRAC_PI_4)
}

fn source(transition: Transition, b: f64, p2: f64) -> SourceParams {
    SourceParams {
        label: "test".into(),
        transition,
        brightness_first_lens: b,
        p_two_photon: p2,
        dephasing: 0.0,
        wavelength: 925.0,
    }
}

fn ideal_setup() -> SetupParams {
    SetupParams {
        eta_setup: 1.0,
        eta_det: 1.0,
        ..SetupParams::default()
    }
}

// independent density: e^{-t/τ} sin²(tΔ/2ħ), θ = π/4
fn density(t: f64) -> f64 {
    (-t / 252.0).exp() * (t * 8.58 / (2.0 * HBAR)).sin().powi(2)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn draws(n: usize, seed: u64) -> Vec<f64> {
    let s = EmissionSampler::new(&Transition::Exciton(s7())).unwrap();
    let mut rng = RngSpec::new(seed, 0).rng();
    (0..n).map(|_| s.sample(&mut rng)).collect()
}

#[test]
fn exciton_sample_mode_sits_at_the_emission_peak() {
    let xs = draws(1_000_000, 11);
    let bw = 2.0;
    let mut h = vec![0.0f64; 500];
    for x in xs {
        let k = (x / bw) as usize;
        if k < h.len() {
            h[k] += 1.0;
        }
    }
    let imax = (0..h.len()).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap();
    // least-squares parabola through ±40 ps around the tallest bin
    let (lo, hi) = (imax - 20, imax + 20);
    let pts: Vec<(f64, f64)> = (lo..=hi).map(|i| ((i as f64 + 0.5) * bw, h[i])).collect();
    let x0 = pts[20].0;
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for &(x, y) in &pts {
        let u = x - x0;
        let basis = [1.0, u, u * u];
        for i in 0..3 {
            r[i] += basis[i] * y;
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
        }
    }
    let c = nalgebra::Matrix3::from_fn(|i, j| m[i][j])
        .lu()
        .solve(&nalgebra::Vector3::from(r))
        .unwrap();
    let mode = x0 - c[1] / (2.0 * c[2]);
    assert!((mode - 195.67).abs() < 3.0, "mode {mode}");
}

#[test]
fn exciton_sample_mean_matches_quadrature() {
    let norm = simpson(density, 0.0, 40.0 * 252.0, 200_000);
    let first = simpson(|t| t * density(t), 0.0, 40.0 * 252.0, 200_000);
    let mean_oracle = first / norm;
    let xs = draws(1_000_000, 12);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - mean_oracle).abs() < 3.0 * se, "{mean} vs {mean_oracle} (se {se})");
}

#[test]
fn no_two_photon_probability_means_single_qd_events() {
    let src = source(Transition::Trion(TrionParams { tau: 164.9 }), 0.4, 0.0);
    let train = simulate_pulse_train(&RngSpec::new(1, 0), &src, &SetupParams::default(), 200_000).unwrap();
    assert_eq!(train.count(Origin::QdReexcite), 0);
    assert!(train.events.windows(2).all(|w| w[0].pulse_index != w[1].pulse_index));
}

#[test]
fn first_photon_count_is_binomial_in_brightness() {
    let src = source(Transition::Exciton(s7()), 0.136, 0.0);
    let train = simulate_pulse_train(&RngSpec::new(2, 0), &src, &SetupParams::default(), 1_000_000).unwrap();
    let n = train.count(Origin::QdFirst) as f64;
    assert!((n - 1.36e5).abs() < 0.01e5, "{n}");
}

#[test]
fn silent_source_yields_no_events() {
    let src = source(Transition::Trion(TrionParams { tau: 100.0 }), 0.0, 0.0);
    let train = simulate_pulse_train(&RngSpec::new(3, 0), &src, &SetupParams::default(), 100_000).unwrap();
    assert!(train.events.is_empty());
    let (a, b) = hbt_streams(&RngSpec::new(3, 1), &train, &SetupParams::default()).unwrap();
    assert!(a.is_empty() && b.is_empty());
}

#[test]
fn invalid_two_photon_probability_is_rejected() {
    let setup = SetupParams::default();
    let tr = Transition::Trion(TrionParams { tau: 100.0 });
    let r = simulate_pulse_train(&RngSpec::new(0, 0), &source(tr.clone(), 0.1, 0.2), &setup, 10);
    assert!(matches!(r, Err(Error::InvalidConfiguration(_))));
    // also unreachable when both photons must be collected independently
    let r = simulate_pulse_train(&RngSpec::new(0, 0), &source(tr.clone(), 0.1, 0.05), &setup, 10);
    assert!(matches!(r, Err(Error::InvalidConfiguration(_))));
    let r = simulate_pulse_train(&RngSpec::new(0, 0), &source(tr, 0.1, 0.0), &setup, 0);
    assert!(matches!(r, Err(Error::Precondition(_))));
}

fn one_photon_per_pulse(n: u64, per_pulse: usize) -> PulseTrain {
    let events = (0..n)
        .flat_map(|k| {
            (0..per_pulse).map(move |_| PhotonEvent {
                pulse_index: k,
                emit_time: 0.0,
                origin: Origin::QdFirst,
            })
        })
        .collect();
    PulseTrain { n_pulses: n, events }
}

#[test]
fn balanced_splitter_with_unit_efficiency() {
    let n = 1_000_000;
    let train = one_photon_per_pulse(n, 1);
    let setup = ideal_setup();
    let (a, b) = hbt_streams(&RngSpec::new(4, 0), &train, &setup).unwrap();
    assert_eq!(a.len() + b.len(), n as usize);
    let frac = a.len() as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.002, "{frac}");
    // one click per pulse
    let period = setup.rep_period();
    let mut pulses: Vec<i64> = a
        .iter()
        .chain(&b)
        .map(|c| (c.abs_time as f64 / period).round() as i64)
        .collect();
    pulses.sort_unstable();
    pulses.dedup();
    assert_eq!(pulses.len(), n as usize);
}

#[test]
fn two_photons_split_half_the_time() {
    let n = 200_000;
    let train = one_photon_per_pulse(n, 2);
    let setup = ideal_setup();
    let (a, _) = hbt_streams(&RngSpec::new(5, 0), &train, &setup).unwrap();
    let period = setup.rep_period();
    let mut per_pulse = vec![0u8; n as usize];
    for c in &a {
        per_pulse[(c.abs_time as f64 / period).round() as usize] += 1;
    }
    let split = per_pulse.iter().filter(|&&k| k == 1).count() as f64 / n as f64;
    assert!((split - 0.5).abs() < 0.006, "{split}");
}

#[test]
fn jitter_spread_matches_its_fwhm() {
    let n = 200_000;
    let train = one_photon_per_pulse(n, 1);
    let setup = ideal_setup();
    let (a, b) = hbt_streams(&RngSpec::new(6, 0), &train, &setup).unwrap();
    let period = setup.rep_period();
    let d: Vec<f64> = a
        .iter()
        .chain(&b)
        .map(|c| {
            let t = c.abs_time as f64;
            t - (t / period).round() * period
        })
        .collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
    let oracle = 53.0 / (2.0 * (2.0 * 2f64.ln()).sqrt());
    assert!((sd / oracle - 1.0).abs() < 0.02, "{sd} vs {oracle}");
}

#[test]
fn streams_are_time_sorted_with_valid_channels() {
    let src = source(Transition::Exciton(s7()), 0.3, 0.02);
    let setup = SetupParams {
        laser_leak_per_pulse: 0.05,
        dark_rate: 2.0e5,
        ..SetupParams::default()
    };
    let spec = RngSpec::new(8, 0);
    let train = simulate_pulse_train(&spec, &src, &setup, 300_000).unwrap();
    for (a, b) in [
        hbt_streams(&spec, &train, &setup).unwrap(),
        hom_streams(&spec, &train, &setup, 0.9).unwrap(),
    ] {
        for (ch, s) in [(0u8, &a), (1u8, &b)] {
            assert!(s.windows(2).all(|w| w[0].abs_time <= w[1].abs_time));
            assert!(s.iter().all(|c| c.channel == ch));
        }
    }
}

#[test]
fn dark_counts_follow_their_rate() {
    let src = source(Transition::Trion(TrionParams { tau: 100.0 }), 0.0, 0.0);
    let setup = SetupParams {
        dark_rate: 1.0e5,
        ..SetupParams::default()
    };
    let n = 1_000_000u64;
    let train = simulate_pulse_train(&RngSpec::new(9, 0), &src, &setup, n).unwrap();
    let (a, b) = hbt_streams(&RngSpec::new(9, 0), &train, &setup).unwrap();
    let expected = 1.0e5 * n as f64 * setup.rep_period() * 1e-12;
    for s in [a, b] {
        assert!((s.len() as f64 - expected).abs() < 5.0 * expected.sqrt(), "{} vs {expected}", s.len());
        assert!(s.iter().all(|c| c.origin == Origin::Dark));
    }
}

#[test]
fn identical_specs_give_identical_streams_on_any_pool() {
    let src = source(Transition::Exciton(s7()), 0.2, 0.01);
    let setup = SetupParams {
        laser_leak_per_pulse: 0.02,
        dark_rate: 1.0e4,
        ..SetupParams::default()
    };
    let spec = RngSpec::new(42, 7);
    let run = || {
        let train = simulate_pulse_train(&spec, &src, &setup, 300_000).unwrap();
        let hbt = hbt_streams(&spec, &train, &setup).unwrap();
        let hom = hom_streams(&spec, &train, &setup, 0.93).unwrap();
        (train, hbt, hom)
    };
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(run);
    let four = pool(4).install(run);
    let again = run();
    assert_eq!(one, four);
    assert_eq!(one, again);
    let other = simulate_pulse_train(&RngSpec::new(42, 8), &src, &setup, 300_000).unwrap();
    assert_ne!(one.0, other);
}

fn clicks_per_pulse(spec: &RngSpec, train: &PulseTrain, setup: &SetupParams) -> [f64; 3] {
    let (a, b) = hbt_streams(spec, train, setup).unwrap();
    let period = setup.rep_period();
    let mut per = vec![0u8; train.n_pulses as usize + 1];
    for c in a.iter().chain(&b) {
        per[(c.abs_time as f64 / period).round() as usize] += 1;
    }
    let mut hist = [0.0; 3];
    for k in per.into_iter().take(train.n_pulses as usize) {
        hist[(k as usize).min(2)] += 1.0;
    }
    hist
}

#[test]
fn one_stage_thinning_matches_two_stage_thinning() {
    use rand::Rng;
    let src = source(Transition::Trion(TrionParams { tau: 150.0 }), 0.5, 0.1);
    let n = 1_000_000;
    let setup = SetupParams::default();
    let train = simulate_pulse_train(&RngSpec::new(20, 0), &src, &setup, n).unwrap();
    let one = clicks_per_pulse(&RngSpec::new(20, 1), &train, &setup);

    let mut rng = RngSpec::new(20, 2).rng();
    let thinned = PulseTrain {
        n_pulses: n,
        events: train
            .events
            .iter()
            .filter(|_| rng.random::<f64>() < setup.eta_setup)
            .copied()
            .collect(),
    };
    let det_only = SetupParams {
        eta_setup: 1.0,
        ..setup.clone()
    };
    let two = clicks_per_pulse(&RngSpec::new(20, 3), &thinned, &det_only);

    // two-sample χ² on the 0 / 1 / 2+ click-count table
    let mut stat = 0.0;
    for k in 0..3 {
        let tot = one[k] + two[k];
        for obs in [one[k], two[k]] {
            let exp = tot / 2.0;
            stat += (obs - exp).powi(2) / exp;
        }
    }
    let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(stat);
    assert!(p > 0.01, "χ² = {stat}, p = {p}");
}

#[test]
fn perfect_overlap_empties_the_zero_delay_window() {
    let src = source(Transition::Exciton(s7()), 0.5, 0.0);
    let setup = ideal_setup();
    let spec = RngSpec::new(30, 0);
    let train = simulate_pulse_train(&spec, &src, &setup, 500_000).unwrap();
    let (a, b) = hom_streams(&spec, &train, &setup, 1.0).unwrap();
    let half = (setup.rep_period() / 2.0) as i64;
    let mut j = 0;
    let mut zero = 0;
    for x in &a {
        while j < b.len() && b[j].abs_time < x.abs_time - half {
            j += 1;
        }
        let mut k = j;
        while k < b.len() && b[k].abs_time < x.abs_time + half {
            zero += 1;
            k += 1;
        }
    }
    assert_eq!(zero, 0);
    assert!(a.len() > 100_000);
}

#[test]
fn hom_rejects_mismatched_delay_and_bad_overlap() {
    let train = one_photon_per_pulse(10, 1);
    let spec = RngSpec::new(0, 0);
    let setup = SetupParams {
        hom_delay: Some(12_000.0),
        ..SetupParams::default()
    };
    assert!(matches!(hom_streams(&spec, &train, &setup, 0.5), Err(Error::Precondition(_))));
    assert!(matches!(
        hom_streams(&spec, &train, &SetupParams::default(), 1.5),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn lifetime_histogram_keeps_all_counts_in_a_wide_window() {
    let src = source(Transition::Trion(TrionParams { tau: 164.9 }), 0.1, 0.0);
    let h = acquire_lifetime(&RngSpec::new(1, 0), &src, &SetupParams::default(), 100_000, -500.0, 4.0, 2000).unwrap();
    let total: f64 = h.iter().sum();
    assert!(total > 99_990.0 && total <= 100_000.0, "{total}");
}

proptest! {
    #[test]
    fn reexcitation_inverts_expected_g2(g in 0.0f64..0.5) {
        let p = reexcitation_for_g2(g).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((expected_g2(p) - g).abs() < 1e-12);
    }
}
