//! End-to-end per-source pipeline: simulate, histogram, estimate, classify,
//! fit, report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BenchConfig, PipelineSettings};
use super::report::{emit_report, Measured, ReportFormat, SourceReport};
use crate::correlation::{
    brightness_chain, build_histogram, corrected_overlap, corrected_overlap_std_err, default_side_peaks, g2_zero,
    hbt_side_peaks, hom_visibility, CorrelationHistogram,
};
use crate::dynamics::{phi_grid, phi_scan_model, PhiScanPoint};
use crate::error::{Error, Result};
use crate::inference::{classify_transition, fit_decay, ClassificationResult, DecayTrace, FitResult, DELTA_FSS, TAU};
use crate::io::{self, Provenance};
use crate::model::{SetupParams, SourceParams, TransitionKind};
use crate::sim::{acquire_lifetime, hbt_streams, hom_streams, simulate_pulse_train, ClickRecord, Domain, RngSpec};

/// Coincidence histograms reach this many periods on each side.
pub const HISTOGRAM_SPAN_PERIODS: f64 = 10.5;
/// Lifetime traces cover `[LIFETIME_START, LIFETIME_END)` ps.
pub const LIFETIME_START: f64 = -512.0;
pub const LIFETIME_END: f64 = 4096.0;
const PHI_AMP_CAVITY: f64 = 2.0;
const PHI_AMP_QD: f64 = 1.0;

/// Stream id of a source, derived from its label so reordering the
/// configuration does not change any source's random draws.
pub fn source_stream(label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let d = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Everything computed for one source.
#[derive(Debug, Clone)]
pub struct SourceArtifacts {
    pub report: SourceReport,
    pub hbt: CorrelationHistogram,
    pub hom: CorrelationHistogram,
    pub decay: DecayTrace,
    pub phi_scan: Vec<PhiScanPoint>,
    pub fit: FitResult,
    pub classification: ClassificationResult,
    pub hbt_clicks: Option<(Vec<ClickRecord>, Vec<ClickRecord>)>,
    pub hom_clicks: Option<(Vec<ClickRecord>, Vec<ClickRecord>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFailure {
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub reports: Vec<SourceReport>,
    pub failures: Vec<SourceFailure>,
    pub files: Vec<PathBuf>,
}

impl PipelineOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn histogram_pair(
    clicks: &(Vec<ClickRecord>, Vec<ClickRecord>),
    setup: &SetupParams,
    bin_width: f64,
) -> Result<CorrelationHistogram> {
    let t = setup.rep_period();
    build_histogram(&clicks.0, &clicks.1, bin_width, HISTOGRAM_SPAN_PERIODS * t, t)
}

/// Polarization scan with multiplicative Gaussian noise on both lines.
pub fn simulate_phi_scan(spec: &RngSpec, source: &SourceParams, points: usize, noise: f64) -> Result<Vec<PhiScanPoint>> {
    let mut rng = spec.substream(Domain::PhiScan, 0);
    let n = Normal::new(1.0, noise).map_err(|e| Error::Precondition(e.to_string()))?;
    phi_grid(points)
        .into_iter()
        .map(|phi| {
            let mut p = phi_scan_model(phi, &source.transition, PHI_AMP_CAVITY, PHI_AMP_QD)?;
            p.cavity_light *= n.sample(&mut rng);
            p.qd_light *= n.sample(&mut rng);
            Ok(p)
        })
        .collect()
}

/// Runs the full chain for one source without touching the filesystem.
pub fn analyze_source(
    source: &SourceParams,
    setup: &SetupParams,
    settings: &PipelineSettings,
    seed: u64,
) -> Result<SourceArtifacts> {
    let spec = RngSpec::new(seed, source_stream(&source.label));
    let n = settings.pulses;
    let train = simulate_pulse_train(&spec, source, setup, n)?;

    let hbt_clicks = hbt_streams(&spec, &train, setup)?;
    let hbt = histogram_pair(&hbt_clicks, setup, settings.bin_width)?;
    let g2 = g2_zero(&hbt, settings.window, &hbt_side_peaks())?;

    let hom_clicks = hom_streams(&spec, &train, setup, source.overlap())?;
    let hom = histogram_pair(&hom_clicks, setup, settings.bin_width)?;
    let v = hom_visibility(&hom, settings.window, &default_side_peaks())?;
    let m = corrected_overlap(v.value, g2.value)?;
    let m_err = corrected_overlap_std_err(v.value, v.std_err, g2.value, g2.std_err);

    let clicks = (hbt_clicks.0.len() + hbt_clicks.1.len()) as f64;
    let duration_s = n as f64 * setup.rep_period() * 1e-12;
    let brightness = brightness_chain(clicks / duration_s, setup)?;

    let phi_scan = simulate_phi_scan(&spec, source, settings.phi_points, settings.phi_noise)?;
    let classification = classify_transition(&phi_scan)?;

    let bins = ((LIFETIME_END - LIFETIME_START) / settings.lifetime_bin).round() as usize;
    let counts = acquire_lifetime(
        &spec,
        source,
        setup,
        settings.lifetime_counts,
        LIFETIME_START,
        settings.lifetime_bin,
        bins,
    )?;
    let decay = DecayTrace::from_histogram(LIFETIME_START, settings.lifetime_bin, counts, classification.kind)?;
    let fit = fit_decay(&decay, setup.jitter_fwhm, &BTreeMap::new())?;
    let measured = |key: &str| -> Result<Measured> {
        match (fit.param(key), fit.std_err(key)) {
            (Some(v), Some(e)) => Ok(Measured::new(v, e)),
            _ => Err(Error::DegenerateFit(format!("fit did not report `{key}`"))),
        }
    };
    let delta_fss_fit = match classification.kind {
        TransitionKind::Exciton => Some(measured(DELTA_FSS)?),
        TransitionKind::Trion => None,
    };

    let report = SourceReport {
        label: source.label.clone(),
        kind: classification.kind,
        g2: Measured::new(g2.value, g2.std_err),
        v_raw: Measured::new(v.value, v.std_err),
        overlap_corrected: Measured::new(m.value, m_err),
        first_lens_b: brightness.first_lens,
        fibered_rate: brightness.fibered_rate,
        tau_fit: measured(TAU)?,
        delta_fss_fit,
        wavelength: source.wavelength,
    };
    report.validate()?;
    let keep = settings.write_clicks;
    Ok(SourceArtifacts {
        report,
        hbt,
        hom,
        decay,
        phi_scan,
        fit,
        classification,
        hbt_clicks: keep.then_some(hbt_clicks),
        hom_clicks: keep.then_some(hom_clicks),
    })
}

/// Writes the per-source files under `dir` and returns their paths.
pub fn write_source_artifacts(dir: &Path, prov: &Provenance, a: &SourceArtifacts) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(PathBuf, String)> = vec![
        (dir.join("hbt_hist.csv"), io::format_histogram(prov, &a.hbt)),
        (dir.join("hom_hist.csv"), io::format_histogram(prov, &a.hom)),
        (dir.join("decay.csv"), io::format_decay(prov, &a.decay)),
        (dir.join("phi_scan.csv"), io::format_phi_scan(prov, &a.phi_scan)),
        (dir.join("fit.json"), io::format_json(prov, &a.fit)?),
        (dir.join("classification.json"), io::format_json(prov, &a.classification)?),
        (dir.join("report.json"), io::format_json(prov, &a.report)?),
    ];
    if let Some((c0, c1)) = &a.hbt_clicks {
        files.push((dir.join("hbt_clicks.csv"), io::format_timestamps(prov, c0, c1)));
    }
    if let Some((c0, c1)) = &a.hom_clicks {
        files.push((dir.join("hom_clicks.csv"), io::format_timestamps(prov, c0, c1)));
    }
    for (path, text) in &files {
        io::write_text(path, text)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// Runs every source in parallel and writes per-source directories plus
/// `summary.{txt,json,csv}` into `out_dir`. A failing source is recorded in
/// `failures.txt` and the others continue.
pub fn run_pipeline(config: &BenchConfig, seed: u64, out_dir: &Path) -> Result<PipelineOutcome> {
    let prov = Provenance::new(seed, config.hash());
    let results: Vec<(String, Result<(SourceReport, Vec<PathBuf>)>)> = config
        .sources
        .par_iter()
        .map(|s| {
            let r = analyze_source(s, &config.setup, &config.pipeline, seed).and_then(|a| {
                let files = write_source_artifacts(&out_dir.join(&s.label), &prov, &a)?;
                Ok((a.report, files))
            });
            (s.label.clone(), r)
        })
        .collect();

    let mut outcome = PipelineOutcome {
        reports: Vec::new(),
        failures: Vec::new(),
        files: Vec::new(),
    };
    for (label, r) in results {
        match r {
            Ok((report, files)) => {
                outcome.reports.push(report);
                outcome.files.extend(files);
            }
            Err(e) => outcome.failures.push(SourceFailure {
                label,
                error: e.to_string(),
            }),
        }
    }
    if !outcome.failures.is_empty() {
        let mut text = prov.header_line() + "\n# label: error\n";
        for f in &outcome.failures {
            text += &format!("{}: {}\n", f.label, f.error);
        }
        let path = out_dir.join("failures.txt");
        io::write_text(&path, &text)?;
        outcome.files.push(path);
    }
    if !outcome.reports.is_empty() {
        for format in [ReportFormat::Table, ReportFormat::Json, ReportFormat::Csv] {
            let path = out_dir.join(format!("summary.{}", format.extension()));
            io::write_text(&path, &emit_report(&outcome.reports, format, &prov)?)?;
            outcome.files.push(path);
        }
    }
    outcome.reports.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(outcome)
}
