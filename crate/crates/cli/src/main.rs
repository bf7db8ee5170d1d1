//! `spsbench` command-line tool.
//!
//! Exit status: 0 on success, 1 on invalid input or configuration, 2 when the
//! run went ahead but some sources or analyses failed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use spsbench::bench::{
    config, emit_report, generate_fleet, load_config, run_pipeline, source_stream, BenchConfig, FleetSpec,
    ReportFormat, SourceReport,
};
use spsbench::correlation::{
    build_histogram, corrected_overlap, corrected_overlap_std_err, default_side_peaks, g2_zero, hbt_side_peaks,
    hom_visibility, CorrelationHistogram, DEFAULT_WINDOW, MIN_SPAN_PERIODS,
};
use spsbench::inference::{classify_transition_with, fit_decay_with, FitOptions, DEFAULT_DEPTH_THRESHOLD};
use spsbench::io::{self, short_hash, Provenance};
use spsbench::model::TransitionKind;
use spsbench::sim::{hbt_streams, hom_streams, simulate_pulse_train, RngSpec};
use spsbench::Error;

#[derive(Debug, Parser)]
#[command(name = "spsbench", version, about = "Quantum-dot single-photon source simulator and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (directory or file, depending on the command).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate HBT and HOM click streams for every source of a configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Pulses per source; overrides the configuration.
        #[arg(long)]
        pulses: Option<u64>,
    },
    /// Build coincidence histograms from timestamp files and estimate g² and
    /// HOM visibility.
    Analyze {
        /// HBT timestamp file (`# channel,time_ps`).
        #[arg(long)]
        hbt: Option<PathBuf>,
        /// HOM timestamp file.
        #[arg(long)]
        hom: Option<PathBuf>,
        /// Laser repetition rate (MHz).
        #[arg(long, default_value_t = 81.0)]
        rep_rate: f64,
        /// Histogram bin width (ps).
        #[arg(long, default_value_t = 16.0)]
        bin_width: f64,
        /// Peak integration half-width (ps).
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a decay trace.
    Fit {
        /// Decay file (`time_ps,counts`).
        trace: PathBuf,
        /// Model; defaults to the `# model=` header of the file.
        #[arg(long)]
        model: Option<TransitionKind>,
        /// Detector jitter FWHM (ps).
        #[arg(long, default_value_t = 53.0)]
        irf: f64,
        /// Also fit the jitter width.
        #[arg(long)]
        fit_jitter: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Classify a transition from a polarization scan.
    Classify {
        /// Scan file (`phi_deg,cavity_light,qd_light`).
        scan: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEPTH_THRESHOLD)]
        threshold: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate per-source `report.json` files into a fleet report.
    Report {
        /// Report files, or directories searched one level deep for `*/report.json`.
        inputs: Vec<PathBuf>,
        /// table, json or csv.
        #[arg(long, default_value = "table")]
        format: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full pipeline for every source of a configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pulses: Option<u64>,
        #[arg(long)]
        bin_width: Option<f64>,
        #[arg(long)]
        window: Option<f64>,
    },
    /// Write a synthetic fifteen-source fleet configuration.
    Fleet {
        #[command(flatten)]
        common: Common,
        /// Pulses per source recorded in the file.
        #[arg(long)]
        pulses: Option<u64>,
    },
}

/// Input problems map to exit status 1.
fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<Error>(),
            Some(
                Error::Validation(_)
                    | Error::InvalidConfiguration(_)
                    | Error::Parse { .. }
                    | Error::UnknownFormat(_)
                    | Error::Precondition(_)
                    | Error::Domain(_)
            )
        ) || e.downcast_ref::<clap::Error>().is_some()
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}

enum Status {
    Done,
    Partial,
}

fn dispatch(cmd: Command) -> anyhow::Result<Status> {
    match cmd {
        Command::Simulate { config, common, pulses } => simulate(&config, &common, pulses),
        Command::Analyze {
            hbt,
            hom,
            rep_rate,
            bin_width,
            window,
            common,
        } => analyze(hbt.as_deref(), hom.as_deref(), rep_rate, bin_width, window, &common),
        Command::Fit {
            trace,
            model,
            irf,
            fit_jitter,
            common,
        } => fit(&trace, model, irf, fit_jitter, &common),
        Command::Classify { scan, threshold, common } => classify(&scan, threshold, &common),
        Command::Report { inputs, format, common } => report(&inputs, &format, &common),
        Command::Run {
            config,
            common,
            pulses,
            bin_width,
            window,
        } => run(&config, &common, pulses, bin_width, window),
        Command::Fleet { common, pulses } => fleet(&common, pulses),
    }
}

fn load_with_overrides(
    path: &Path,
    pulses: Option<u64>,
    bin_width: Option<f64>,
    window: Option<f64>,
) -> anyhow::Result<BenchConfig> {
    let c = load_config(path)?;
    let mut p = c.pipeline;
    if let Some(n) = pulses {
        p.pulses = n;
    }
    if let Some(b) = bin_width {
        p.bin_width = b;
    }
    if let Some(w) = window {
        p.window = w;
    }
    Ok(BenchConfig::new(c.setup, p, c.sources)?)
}

fn simulate(config: &Path, common: &Common, pulses: Option<u64>) -> anyhow::Result<Status> {
    let c = load_with_overrides(config, pulses, None, None)?;
    let prov = Provenance::new(common.seed, c.hash());
    for s in &c.sources {
        let spec = RngSpec::new(common.seed, source_stream(&s.label));
        let train = simulate_pulse_train(&spec, s, &c.setup, c.pipeline.pulses)?;
        let (h0, h1) = hbt_streams(&spec, &train, &c.setup)?;
        let (m0, m1) = hom_streams(&spec, &train, &c.setup, s.overlap())?;
        let dir = common.out.join(&s.label);
        io::write_text(&dir.join("hbt_clicks.csv"), &io::format_timestamps(&prov, &h0, &h1))?;
        io::write_text(&dir.join("hom_clicks.csv"), &io::format_timestamps(&prov, &m0, &m1))?;
        println!("{}: {} HBT and {} HOM clicks", s.label, h0.len() + h1.len(), m0.len() + m1.len());
    }
    Ok(Status::Done)
}

/// Seed recorded in the provenance line of an input file, if any.
fn header_seed(text: &str) -> Option<u64> {
    text.lines()
        .next()?
        .split_whitespace()
        .find_map(|w| w.strip_prefix("seed="))?
        .parse()
        .ok()
}

fn input_provenance(common: &Common, inputs: &[&Path], args: &str) -> anyhow::Result<Provenance> {
    let mut bytes = args.as_bytes().to_vec();
    let mut seed = None;
    for p in inputs {
        let text = io::read_text(p)?;
        seed = seed.or_else(|| header_seed(&text));
        bytes.extend_from_slice(text.as_bytes());
    }
    let seed = if common.seed != 0 { common.seed } else { seed.unwrap_or(0) };
    Ok(Provenance::new(seed, short_hash(&bytes)))
}

fn histogram_from(path: &Path, rep_rate: f64, bin_width: f64) -> anyhow::Result<CorrelationHistogram> {
    if !(rep_rate > 0.0) {
        bail!(Error::Precondition(format!("rep rate must be > 0, got {rep_rate}")));
    }
    let period = 1e6 / rep_rate;
    let (c0, c1) = io::read_timestamps(path)?;
    let hist = build_histogram(&c0, &c1, bin_width, (MIN_SPAN_PERIODS + 0.5) * period, period)
        .with_context(|| format!("histogram of {}", path.display()))?;
    Ok(hist)
}

fn analyze(
    hbt: Option<&Path>,
    hom: Option<&Path>,
    rep_rate: f64,
    bin_width: f64,
    window: f64,
    common: &Common,
) -> anyhow::Result<Status> {
    if hbt.is_none() && hom.is_none() {
        bail!(Error::Precondition("give --hbt, --hom or both".into()));
    }
    let inputs: Vec<&Path> = hbt.iter().chain(hom.iter()).copied().collect();
    let prov = input_provenance(common, &inputs, &format!("{rep_rate} {bin_width} {window}"))?;
    let mut result = BTreeMap::new();
    let mut g2 = None;
    let mut partial = false;
    if let Some(p) = hbt {
        let h = histogram_from(p, rep_rate, bin_width)?;
        io::write_text(&common.out.join("hbt_hist.csv"), &io::format_histogram(&prov, &h))?;
        match g2_zero(&h, window, &hbt_side_peaks()) {
            Ok(g) => {
                println!("g2(0) = {:.5} ± {:.5}", g.value, g.std_err);
                result.insert("g2", serde_json::to_value(g)?);
                g2 = Some(g);
            }
            Err(e) => {
                eprintln!("g2: {e}");
                partial = true;
            }
        }
    }
    if let Some(p) = hom {
        let h = histogram_from(p, rep_rate, bin_width)?;
        io::write_text(&common.out.join("hom_hist.csv"), &io::format_histogram(&prov, &h))?;
        match hom_visibility(&h, window, &default_side_peaks()) {
            Ok(v) => {
                println!("V_HOM = {:.5} ± {:.5}", v.value, v.std_err);
                if let Some(g) = g2 {
                    let m = corrected_overlap(v.value, g.value)?;
                    let err = corrected_overlap_std_err(v.value, v.std_err, g.value, g.std_err);
                    println!("M = {:.5} ± {:.5}{}", m.value, err, if m.clamped { " (clamped)" } else { "" });
                    result.insert(
                        "overlap",
                        serde_json::json!({ "value": m.value, "std_err": err, "clamped": m.clamped }),
                    );
                }
                result.insert("hom", serde_json::to_value(v)?);
            }
            Err(e) => {
                eprintln!("hom: {e}");
                partial = true;
            }
        }
    }
    io::write_text(&common.out.join("analysis.json"), &io::format_json(&prov, &result)?)?;
    Ok(if partial { Status::Partial } else { Status::Done })
}

fn fit(trace: &Path, model: Option<TransitionKind>, irf: f64, fit_jitter: bool, common: &Common) -> anyhow::Result<Status> {
    let prov = input_provenance(common, &[trace], &format!("{model:?} {irf} {fit_jitter}"))?;
    let t = io::read_decay(trace, model)?;
    let opts = FitOptions {
        fit_jitter,
        ..FitOptions::default()
    };
    let r = fit_decay_with(&t, irf, &BTreeMap::new(), &opts)?;
    for (k, v) in &r.params {
        println!("{k:>10} = {v:.6} ± {:.6}", r.std_errs.get(k).copied().unwrap_or(0.0));
    }
    println!("reduced chi2 = {:.4}", r.reduced_chi2);
    io::write_text(&common.out, &io::format_json(&prov, &r)?)?;
    Ok(Status::Done)
}

fn classify(scan: &Path, threshold: f64, common: &Common) -> anyhow::Result<Status> {
    let prov = input_provenance(common, &[scan], &threshold.to_string())?;
    let points = io::read_phi_scan(scan)?;
    let r = classify_transition_with(&points, threshold)?;
    match r.theta_est {
        Some(t) => println!("{} (theta = {:.2} deg, depth {:.3})", r.kind, t.to_degrees(), r.modulation_depth),
        None => println!("{} (depth {:.3})", r.kind, r.modulation_depth),
    }
    io::write_text(&common.out, &io::format_json(&prov, &r)?)?;
    Ok(Status::Done)
}

fn report_files(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| p.display().to_string())?
                .filter_map(|e| e.ok())
                .map(|e| e.path().join("report.json"))
                .filter(|f| f.is_file())
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn report(inputs: &[PathBuf], format: &str, common: &Common) -> anyhow::Result<Status> {
    let format: ReportFormat = format.parse()?;
    let files = report_files(inputs)?;
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    let prov = input_provenance(common, &refs, "")?;
    let reports = files
        .iter()
        .map(|f| {
            let text = io::read_text(f)?;
            serde_json::from_str::<SourceReport>(&text).map_err(|e| Error::Parse {
                path: f.clone(),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let text = emit_report(&reports, format, &prov)?;
    io::write_text(&common.out, &text)?;
    print!("{text}");
    Ok(Status::Done)
}

fn run(
    config: &Path,
    common: &Common,
    pulses: Option<u64>,
    bin_width: Option<f64>,
    window: Option<f64>,
) -> anyhow::Result<Status> {
    let c = load_with_overrides(config, pulses, bin_width, window)?;
    let out = run_pipeline(&c, common.seed, &common.out)?;
    for f in &out.failures {
        eprintln!("{}: {}", f.label, f.error);
    }
    println!(
        "{} of {} sources analyzed; summary in {}",
        out.reports.len(),
        c.sources.len(),
        common.out.join("summary.txt").display()
    );
    Ok(if out.is_complete() { Status::Done } else { Status::Partial })
}

fn fleet(common: &Common, pulses: Option<u64>) -> anyhow::Result<Status> {
    let sources = generate_fleet(&FleetSpec::default(), common.seed)?;
    let mut c = BenchConfig::new(Default::default(), Default::default(), sources)?;
    if let Some(n) = pulses {
        c.pipeline.pulses = n;
    }
    let text = format!(
        "# synthetic fleet, seed {}\n{}",
        common.seed,
        config::to_toml(&c)?
    );
    io::write_text(&common.out, &text)?;
    Ok(Status::Done)
}
