//! Per-source figures of merit and fleet statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Provenance;
use crate::model::TransitionKind;

/// Standard deviations divide by `n`, stated in every report header.
pub const STD_CONVENTION: &str = "population";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub err: f64,
}

impl Measured {
    pub fn new(value: f64, err: f64) -> Self {
        Self { value, err }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub label: String,
    pub kind: TransitionKind,
    pub g2: Measured,
    pub v_raw: Measured,
    pub overlap_corrected: Measured,
    /// Probability per pulse at the first lens.
    pub first_lens_b: f64,
    /// Single-photon rate at the fiber output (Hz).
    pub fibered_rate: f64,
    /// ps
    pub tau_fit: Measured,
    /// µeV; present for excitons only.
    pub delta_fss_fit: Option<Measured>,
    /// nm
    pub wavelength: f64,
}

impl SourceReport {
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<&Measured> = vec![&self.g2, &self.v_raw, &self.overlap_corrected, &self.tau_fit];
        errs.extend(self.delta_fss_fit.as_ref());
        if errs.iter().any(|m| !(m.err >= 0.0)) {
            return Err(Error::Domain(format!("{}: uncertainties must be >= 0", self.label)));
        }
        if (self.kind == TransitionKind::Exciton) != self.delta_fss_fit.is_some() {
            return Err(Error::Domain(format!(
                "{}: a fine-structure fit is reported exactly for excitons",
                self.label
            )));
        }
        Ok(())
    }
}

/// Aggregated metrics, in the order they are printed.
pub const METRICS: [&str; 5] = ["g2", "overlap", "brightness", "wavelength", "tau"];

fn metric(r: &SourceReport, name: &str) -> f64 {
    match name {
        "g2" => r.g2.value,
        "overlap" => r.overlap_corrected.value,
        "brightness" => r.first_lens_b,
        "wavelength" => r.wavelength,
        "tau" => r.tau_fit.value,
        _ => unreachable!("unknown metric {name}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    /// Values are sorted first so the result does not depend on input order.
    fn of(values: &mut [f64]) -> Self {
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mean = (values.iter().sum::<f64>() / n).clamp(values[0], values[values.len() - 1]);
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values[0],
            max: values[values.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub std_convention: String,
    pub exciton: Option<GroupSummary>,
    pub trion: Option<GroupSummary>,
    pub overall: GroupSummary,
}

impl BenchmarkSummary {
    pub fn group(&self, kind: TransitionKind) -> Option<&GroupSummary> {
        match kind {
            TransitionKind::Exciton => self.exciton.as_ref(),
            TransitionKind::Trion => self.trion.as_ref(),
        }
    }
}

fn summarize<'a>(reports: impl Iterator<Item = &'a SourceReport> + Clone) -> Option<GroupSummary> {
    let count = reports.clone().count();
    if count == 0 {
        return None;
    }
    let metrics = METRICS
        .iter()
        .map(|m| {
            let mut v: Vec<f64> = reports.clone().map(|r| metric(r, m)).collect();
            (m.to_string(), Stat::of(&mut v))
        })
        .collect();
    Some(GroupSummary { count, metrics })
}

/// Per-kind and overall mean and population standard deviation of every metric.
pub fn aggregate_benchmark(reports: &[SourceReport]) -> Result<BenchmarkSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("no source reports to aggregate".into()));
    }
    for r in reports {
        r.validate()?;
    }
    let of_kind = |k| reports.iter().filter(move |r: &&SourceReport| r.kind == k);
    Ok(BenchmarkSummary {
        std_convention: STD_CONVENTION.to_string(),
        exciton: summarize(of_kind(TransitionKind::Exciton)),
        trion: summarize(of_kind(TransitionKind::Trion)),
        overall: summarize(reports.iter()).expect("non-empty"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Table => "txt",
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" | "table-text" | "txt" => Ok(ReportFormat::Table),
            "json" | "structured-json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ReportDocument {
    meta: Provenance,
    std_convention: String,
    summary: BenchmarkSummary,
    sources: Vec<SourceReport>,
}

fn sorted(reports: &[SourceReport]) -> Vec<SourceReport> {
    let mut r = reports.to_vec();
    r.sort_by(|a, b| a.label.cmp(&b.label));
    r
}

/// Renders the fleet report. Sources are ordered by label.
pub fn emit_report(reports: &[SourceReport], format: ReportFormat, prov: &Provenance) -> Result<String> {
    let summary = aggregate_benchmark(reports)?;
    let reports = sorted(reports);
    match format {
        ReportFormat::Json => {
            let doc = ReportDocument {
                meta: prov.clone(),
                std_convention: STD_CONVENTION.to_string(),
                summary,
                sources: reports,
            };
            let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Domain(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => Ok(render_csv(&reports, prov)),
        ReportFormat::Table => Ok(render_table(&summary, &reports, prov)),
    }
}

const CSV_COLUMNS: [&str; 15] = [
    "label",
    "kind",
    "g2",
    "g2_err",
    "v_raw",
    "v_raw_err",
    "overlap",
    "overlap_err",
    "first_lens_b",
    "fibered_rate_hz",
    "tau_ps",
    "tau_err_ps",
    "delta_fss_uev",
    "delta_fss_err_uev",
    "wavelength_nm",
];

fn render_csv(reports: &[SourceReport], prov: &Provenance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", prov.header_line());
    let _ = writeln!(s, "# std_convention={STD_CONVENTION}");
    let _ = writeln!(s, "{}", CSV_COLUMNS.join(","));
    for r in reports {
        let (d, de) = match r.delta_fss_fit {
            Some(m) => (m.value.to_string(), m.err.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.kind,
            r.g2.value,
            r.g2.err,
            r.v_raw.value,
            r.v_raw.err,
            r.overlap_corrected.value,
            r.overlap_corrected.err,
            r.first_lens_b,
            r.fibered_rate,
            r.tau_fit.value,
            r.tau_fit.err,
            d,
            de,
            r.wavelength
        );
    }
    s
}

fn pct(m: Measured) -> String {
    format!("{:6.2} ± {:4.2}", 100.0 * m.value, 100.0 * m.err)
}

fn render_table(summary: &BenchmarkSummary, reports: &[SourceReport], prov: &Provenance) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", prov.header_line());
    let _ = writeln!(s, "# std_convention={STD_CONVENTION} (standard deviations divide by n)");
    let _ = writeln!(
        s,
        "{:<12} {:<8} {:>15} {:>15} {:>15} {:>8} {:>11} {:>15} {:>14} {:>9}",
        "label", "kind", "g2 (%)", "V_raw (%)", "M (%)", "B (%)", "fibered MHz", "tau (ps)", "FSS (µeV)", "λ (nm)"
    );
    for r in reports {
        let fss = r
            .delta_fss_fit
            .map(|m| format!("{:6.3} ± {:5.3}", m.value, m.err))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<12} {:<8} {:>15} {:>15} {:>15} {:>8.2} {:>11.3} {:>15} {:>14} {:>9.2}",
            r.label,
            r.kind.as_str(),
            pct(r.g2),
            pct(r.v_raw),
            pct(r.overlap_corrected),
            100.0 * r.first_lens_b,
            r.fibered_rate / 1e6,
            format!("{:6.1} ± {:4.1}", r.tau_fit.value, r.tau_fit.err),
            fss,
            r.wavelength
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<12} {:>5} {:>15} {:>15} {:>15} {:>17} {:>15}",
        "group", "n", "g2 (%)", "M (%)", "B (%)", "λ (nm)", "tau (ps)"
    );
    let groups = [
        ("exciton", summary.exciton.as_ref()),
        ("trion", summary.trion.as_ref()),
        ("all", Some(&summary.overall)),
    ];
    for (name, g) in groups {
        let Some(g) = g else { continue };
        let st = |m: &str, scale: f64, prec: usize| {
            let x = g.metrics[m];
            format!("{:.*} ± {:.*}", prec, scale * x.mean, prec, scale * x.std)
        };
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:>15} {:>15} {:>15} {:>17} {:>15}",
            name,
            g.count,
            st("g2", 100.0, 2),
            st("overlap", 100.0, 2),
            st("brightness", 100.0, 2),
            st("wavelength", 1.0, 2),
            st("tau", 1.0, 1),
        );
    }
    s
}

fn parse_measured(cols: &[&str], i: usize, line: usize) -> Result<Measured> {
    Ok(Measured::new(parse_num(cols, i, line)?, parse_num(cols, i + 1, line)?))
}

fn parse_num(cols: &[&str], i: usize, line: usize) -> Result<f64> {
    cols[i]
        .parse()
        .map_err(|_| Error::Domain(format!("line {line}: bad `{}` value `{}`", CSV_COLUMNS[i], cols[i])))
}

/// Reads back the rows written by the csv format.
pub fn parse_report_csv(text: &str) -> Result<Vec<SourceReport>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == CSV_COLUMNS.join(",") => {}
        _ => return Err(Error::Domain("report csv lacks the column header".into())),
    }
    lines
        .map(|(i, l)| {
            let line = i + 1;
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != CSV_COLUMNS.len() {
                return Err(Error::Domain(format!("line {line}: expected {} columns", CSV_COLUMNS.len())));
            }
            let delta_fss_fit = if cols[12].is_empty() {
                None
            } else {
                Some(parse_measured(&cols, 12, line)?)
            };
            let r = SourceReport {
                label: cols[0].to_string(),
                kind: cols[1].parse()?,
                g2: parse_measured(&cols, 2, line)?,
                v_raw: parse_measured(&cols, 4, line)?,
                overlap_corrected: parse_measured(&cols, 6, line)?,
                first_lens_b: parse_num(&cols, 8, line)?,
                fibered_rate: parse_num(&cols, 9, line)?,
                tau_fit: parse_measured(&cols, 10, line)?,
                delta_fss_fit,
                wavelength: parse_num(&cols, 14, line)?,
            };
            r.validate()?;
            Ok(r)
        })
        .collect()
}

/// Reads back the source list of the json format.
pub fn parse_report_json(text: &str) -> Result<Vec<SourceReport>> {
    let doc: ReportDocument = serde_json::from_str(text).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(doc.sources)
}
