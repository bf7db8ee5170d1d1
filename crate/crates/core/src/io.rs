//! Plain-text data files: click timestamps, coincidence histograms, decay
//! traces and polarization scans.
//!
//! Every file starts with `#` comment lines. The first one is the provenance
//! line `# spsbench <version> seed=<seed> config=<hash>`; readers skip all
//! comment lines except the typed `# key=value` metadata they need.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationHistogram;
use crate::dynamics::PhiScanPoint;
use crate::error::{Error, Result};
use crate::inference::DecayTrace;
use crate::model::TransitionKind;
use crate::sim::{ClickRecord, Origin};

pub const TOOL_NAME: &str = "spsbench";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Who wrote a file and from which inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// First 16 hex digits of the SHA-256 of the canonical configuration.
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            seed,
            config_hash: config_hash.into(),
        }
    }

    pub fn header_line(&self) -> String {
        format!("# {} {} seed={} config={}", self.tool, self.version, self.seed, self.config_hash)
    }
}

/// SHA-256 of `bytes`, truncated to 16 hex digits.
pub fn short_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `# key=value` metadata from the comment block.
fn meta(text: &str, key: &str) -> Option<String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').trim().split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
}

fn meta_f64(path: &Path, text: &str, key: &str) -> Result<f64> {
    let v = meta(text, key).ok_or_else(|| Error::parse(path, format!("missing `# {key}=` header")))?;
    v.parse()
        .map_err(|_| Error::parse(path, format!("`{key}` is not a number: {v}")))
}

/// Data rows: non-empty, non-comment lines after the column header.
fn rows<'a>(path: &'a Path, text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)> + 'a> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((i, h)) => {
            return Err(Error::parse(
                path,
                format!("line {}: expected header `{header}`, found `{h}`", i + 1),
            ))
        }
        None => return Err(Error::parse(path, format!("missing header `{header}`"))),
    }
    Ok(lines.map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, cols: &[&str], i: usize, name: &str) -> Result<T> {
    let raw = cols
        .get(i)
        .ok_or_else(|| Error::parse(path, format!("line {line}: missing column `{name}`")))?;
    raw.parse()
        .map_err(|_| Error::parse(path, format!("line {line}: bad `{name}` value `{raw}`")))
}

// ---- timestamps ----

/// Merges two channels into one time-ordered stream. Ties keep channel 0 first.
pub fn format_timestamps(prov: &Provenance, c0: &[ClickRecord], c1: &[ClickRecord]) -> String {
    let mut all: Vec<&ClickRecord> = c0.iter().chain(c1).collect();
    all.sort_by_key(|c| (c.abs_time, c.channel));
    let mut s = String::with_capacity(16 * all.len() + 64);
    s.push_str(&prov.header_line());
    s.push('\n');
    s.push_str("# channel,time_ps\n");
    for c in all {
        let _ = writeln!(s, "{},{}", c.channel, c.abs_time);
    }
    s
}

/// Reads a two-channel timestamp file. Origins are not stored on disk and
/// come back as [`Origin::Dark`].
pub fn read_timestamps(path: &Path) -> Result<(Vec<ClickRecord>, Vec<ClickRecord>)> {
    let text = read_text(path)?;
    if !text.lines().any(|l| l.trim() == "# channel,time_ps") {
        return Err(Error::parse(path, "missing `# channel,time_ps` header"));
    }
    let mut out = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(Error::parse(path, format!("line {}: expected `channel,time_ps`", i + 1)));
        }
        let channel: u8 = field(path, i + 1, &cols, 0, "channel")?;
        let abs_time: i64 = field(path, i + 1, &cols, 1, "time_ps")?;
        let rec = ClickRecord {
            channel,
            abs_time,
            origin: Origin::Dark,
        };
        match channel {
            0 => out.0.push(rec),
            1 => out.1.push(rec),
            c => return Err(Error::parse(path, format!("line {}: channel {c} is not 0 or 1", i + 1))),
        }
    }
    for (ch, v) in [&out.0, &out.1].into_iter().enumerate() {
        if v.windows(2).any(|w| w[1].abs_time < w[0].abs_time) {
            return Err(Error::parse(path, format!("channel {ch} timestamps are not sorted")));
        }
    }
    Ok(out)
}

// ---- histograms ----

const HIST_HEADER: &str = "bin_center_ps,counts";

pub fn format_histogram(prov: &Provenance, hist: &CorrelationHistogram) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", prov.header_line());
    let _ = writeln!(s, "# bin_width_ps={}", hist.bin_width);
    let _ = writeln!(s, "# rep_period_ps={}", hist.rep_period);
    let _ = writeln!(s, "{HIST_HEADER}");
    for (d, c) in hist.delays.iter().zip(&hist.counts) {
        let _ = writeln!(s, "{d},{c}");
    }
    s
}

pub fn parse_histogram(path: &Path, text: &str) -> Result<CorrelationHistogram> {
    let bw = meta_f64(path, text, "bin_width_ps")?;
    let period = meta_f64(path, text, "rep_period_ps")?;
    let mut delays = Vec::new();
    let mut counts = Vec::new();
    for (line, cols) in rows(path, text, HIST_HEADER)? {
        delays.push(field(path, line, &cols, 0, "bin_center_ps")?);
        counts.push(field(path, line, &cols, 1, "counts")?);
    }
    CorrelationHistogram::from_parts(bw, period, delays, counts).map_err(|e| Error::parse(path, e))
}

pub fn read_histogram(path: &Path) -> Result<CorrelationHistogram> {
    parse_histogram(path, &read_text(path)?)
}

// ---- decay traces ----

const DECAY_HEADER: &str = "time_ps,counts";

pub fn format_decay(prov: &Provenance, trace: &DecayTrace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", prov.header_line());
    let _ = writeln!(s, "# model={}", trace.model_kind);
    let _ = writeln!(s, "{DECAY_HEADER}");
    for (t, c) in trace.t_grid.iter().zip(&trace.counts) {
        let _ = writeln!(s, "{t},{c}");
    }
    s
}

/// Reads a decay trace; `kind` overrides the `# model=` header when given.
pub fn parse_decay(path: &Path, text: &str, kind: Option<TransitionKind>) -> Result<DecayTrace> {
    let kind = match (kind, meta(text, "model")) {
        (Some(k), _) => k,
        (None, Some(m)) => m.parse().map_err(|e| Error::parse(path, e))?,
        (None, None) => return Err(Error::parse(path, "no `# model=` header and no model given")),
    };
    let mut t = Vec::new();
    let mut c = Vec::new();
    for (line, cols) in rows(path, text, DECAY_HEADER)? {
        t.push(field(path, line, &cols, 0, "time_ps")?);
        c.push(field(path, line, &cols, 1, "counts")?);
    }
    DecayTrace::new(t, c, kind).map_err(|e| Error::parse(path, e))
}

pub fn read_decay(path: &Path, kind: Option<TransitionKind>) -> Result<DecayTrace> {
    parse_decay(path, &read_text(path)?, kind)
}

// ---- polarization scans ----

const PHI_HEADER: &str = "phi_deg,cavity_light,qd_light";

pub fn format_phi_scan(prov: &Provenance, points: &[PhiScanPoint]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", prov.header_line());
    let _ = writeln!(s, "{PHI_HEADER}");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.phi.to_degrees(), p.cavity_light, p.qd_light);
    }
    s
}

pub fn parse_phi_scan(path: &Path, text: &str) -> Result<Vec<PhiScanPoint>> {
    rows(path, text, PHI_HEADER)?
        .map(|(line, cols)| {
            Ok(PhiScanPoint {
                phi: field::<f64>(path, line, &cols, 0, "phi_deg")?.to_radians(),
                cavity_light: field(path, line, &cols, 1, "cavity_light")?,
                qd_light: field(path, line, &cols, 2, "qd_light")?,
            })
        })
        .collect()
}

pub fn read_phi_scan(path: &Path) -> Result<Vec<PhiScanPoint>> {
    parse_phi_scan(path, &read_text(path)?)
}

// ---- structured documents ----

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    meta: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with the provenance under `meta`.
pub fn format_json<T: Serialize>(prov: &Provenance, body: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Document { meta: prov, body })
        .map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn prov() -> Provenance {
        Provenance::new(7, "0123456789abcdef")
    }

    #[test]
    fn histogram_round_trips() {
        let h = CorrelationHistogram::from_parts(
            100.0,
            1000.0,
            (-110..=110).map(|k| k as f64 * 100.0).collect(),
            (0..221).map(|k| (k * 7 % 13) as u64).collect(),
        )
        .unwrap();
        let text = format_histogram(&prov(), &h);
        assert!(text.starts_with("# spsbench "));
        assert_eq!(parse_histogram(&PathBuf::from("h.csv"), &text).unwrap(), h);
    }

    #[test]
    fn decay_header_selects_model() {
        let tr = DecayTrace::from_histogram(-8.0, 4.0, vec![1.0, 2.5, 3.0], TransitionKind::Trion).unwrap();
        let text = format_decay(&prov(), &tr);
        let back = parse_decay(&PathBuf::from("d.csv"), &text, None).unwrap();
        assert_eq!(back, tr);
        let forced = parse_decay(&PathBuf::from("d.csv"), &text, Some(TransitionKind::Exciton)).unwrap();
        assert_eq!(forced.model_kind, TransitionKind::Exciton);
    }

    #[test]
    fn bad_rows_name_the_line() {
        let text = "# x\nbin_center_ps,counts\n0,1\nfoo,2\n";
        let text = format!("# bin_width_ps=1\n# rep_period_ps=1\n{text}");
        let err = parse_histogram(&PathBuf::from("h.csv"), &text).unwrap_err().to_string();
        assert!(err.contains("line 6"), "{err}");
    }

    #[test]
    fn short_hash_is_sixteen_hex_digits() {
        let h = short_hash(b"abc");
        assert_eq!(h, "ba7816bf8f01cfea");
    }
}
