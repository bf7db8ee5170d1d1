//! TOML configuration files.
//!
//! ```toml
//! [setup]                  # optional, every key defaults
//! rep_rate = 81.0          # MHz
//! eta_setup = 0.40
//! eta_det = 0.30
//! jitter_fwhm = 53.0       # ps
//!
//! [pipeline]               # optional
//! pulses = 1000000
//!
//! [[source]]
//! label = "S11"
//! kind = "trion"
//! tau = 164.9              # ps
//! brightness = 0.15        # first-lens probability per pulse
//! g2 = 0.054               # or p_two_photon
//! overlap = 0.895          # or dephasing
//! wavelength = 924.7       # nm
//!
//! [[source]]
//! label = "S7"
//! kind = "exciton"
//! tau = 252.0
//! delta_fss = 8.58         # µeV
//! theta_deg = 45.0
//! brightness = 0.13
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlation::DEFAULT_WINDOW;
use crate::error::{Error, Result, Violation};
use crate::io::short_hash;
use crate::model::{
    validate_source, ExcitonParams, SetupParams, SourceParams, Transition, TransitionKind, TrionParams,
};
use crate::sim::p_two_photon_for_g2;

pub const DEFAULT_WAVELENGTH: f64 = 925.0;
pub const DEFAULT_THETA_DEG: f64 = 45.0;

/// One `[[source]]` table as written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub label: Option<String>,
    pub kind: TransitionKind,
    /// ps
    pub tau: f64,
    /// µeV; excitons only.
    pub delta_fss: Option<f64>,
    /// Degrees; excitons only.
    pub theta_deg: Option<f64>,
    pub brightness: f64,
    pub p_two_photon: Option<f64>,
    /// Target `g²(0)`, converted to `p_two_photon`.
    pub g2: Option<f64>,
    pub dephasing: Option<f64>,
    /// Mean wavepacket overlap, `1 - dephasing`.
    pub overlap: Option<f64>,
    /// nm
    pub wavelength: Option<f64>,
}

/// Pipeline knobs that may also come from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub pulses: u64,
    /// Coincidence histogram bin width (ps).
    pub bin_width: f64,
    /// Half-width of the peak integration window (ps).
    pub window: f64,
    /// Detected events in each lifetime trace.
    pub lifetime_counts: u64,
    /// Lifetime histogram bin width (ps).
    pub lifetime_bin: f64,
    pub phi_points: usize,
    /// Relative Gaussian noise on the QD line intensity of the polarization scan.
    pub phi_noise: f64,
    /// Also write the raw click streams.
    pub write_clicks: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            pulses: 1_000_000,
            bin_width: 16.0,
            window: DEFAULT_WINDOW,
            lifetime_counts: 1_000_000,
            lifetime_bin: 4.0,
            phi_points: 37,
            phi_noise: 0.05,
            write_clicks: false,
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.pulses == 0 {
            v.push(Violation::new("pipeline.pulses", "must be > 0"));
        }
        for (name, x) in [
            ("pipeline.bin_width", self.bin_width),
            ("pipeline.window", self.window),
            ("pipeline.lifetime_bin", self.lifetime_bin),
        ] {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(name, format!("must be finite and > 0, got {x}")));
            }
        }
        if self.lifetime_counts == 0 {
            v.push(Violation::new("pipeline.lifetime_counts", "must be > 0"));
        }
        if self.phi_points < 8 {
            v.push(Violation::new("pipeline.phi_points", "must be >= 8"));
        }
        if !(self.phi_noise.is_finite() && self.phi_noise >= 0.0) {
            v.push(Violation::new("pipeline.phi_noise", "must be finite and >= 0"));
        }
        v
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    setup: SetupParams,
    #[serde(default)]
    pipeline: PipelineSettings,
    #[serde(default)]
    source: Vec<SourceEntry>,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub setup: SetupParams,
    pub pipeline: PipelineSettings,
    pub sources: Vec<SourceParams>,
}

impl BenchConfig {
    /// Validates every part and reports all violations at once.
    pub fn new(setup: SetupParams, pipeline: PipelineSettings, sources: Vec<SourceParams>) -> Result<Self> {
        let mut v = Vec::new();
        if let Err(Error::Validation(errs)) = setup.validate() {
            v.extend(errs.into_iter().map(|e| Violation::new(format!("setup.{}", e.field), e.message)));
        }
        v.extend(pipeline.validate());
        if sources.is_empty() {
            v.push(Violation::new("source", "at least one [[source]] is required"));
        }
        let mut checked = Vec::with_capacity(sources.len());
        for (i, s) in sources.into_iter().enumerate() {
            if !label_is_safe(&s.label) {
                v.push(Violation::new(
                    format!("source[{i}].label"),
                    format!("`{}` must use only letters, digits, '-', '_' and '.'", s.label),
                ));
            }
            match validate_source(s) {
                Ok(s) => checked.push(s),
                Err(Error::Validation(errs)) => v.extend(
                    errs.into_iter()
                        .map(|e| Violation::new(format!("source[{i}].{}", e.field), e.message)),
                ),
                Err(e) => return Err(e),
            }
        }
        let mut labels: Vec<&str> = checked.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        for w in labels.windows(2).filter(|w| w[0] == w[1]) {
            v.push(Violation::new("source.label", format!("duplicate label `{}`", w[0])));
        }
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        Ok(Self {
            setup,
            pipeline,
            sources: checked,
        })
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        short_hash(&json)
    }
}

fn label_is_safe(label: &str) -> bool {
    !label.is_empty()
        && label != "."
        && label != ".."
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl SourceEntry {
    fn resolve(&self, index: usize, violations: &mut Vec<Violation>) -> Option<SourceParams> {
        let at = |f: &str| format!("source[{index}].{f}");
        let transition = match self.kind {
            TransitionKind::Exciton => {
                let Some(delta) = self.delta_fss else {
                    violations.push(Violation::new(at("delta_fss"), "required for excitons"));
                    return None;
                };
                let theta = self.theta_deg.unwrap_or(DEFAULT_THETA_DEG).to_radians();
                Transition::Exciton(ExcitonParams::new(self.tau, delta, theta))
            }
            TransitionKind::Trion => {
                for (name, given) in [("delta_fss", self.delta_fss.is_some()), ("theta_deg", self.theta_deg.is_some())] {
                    if given {
                        violations.push(Violation::new(at(name), "only applies to excitons"));
                    }
                }
                Transition::Trion(TrionParams { tau: self.tau })
            }
        };
        let p_two_photon = match (self.p_two_photon, self.g2) {
            (Some(_), Some(_)) => {
                violations.push(Violation::new(at("g2"), "give either g2 or p_two_photon, not both"));
                return None;
            }
            (Some(p), None) => p,
            (None, Some(g)) => match p_two_photon_for_g2(g, self.brightness) {
                Ok(p) => p,
                Err(e) => {
                    violations.push(Violation::new(at("g2"), e.to_string()));
                    return None;
                }
            },
            (None, None) => 0.0,
        };
        let dephasing = match (self.dephasing, self.overlap) {
            (Some(_), Some(_)) => {
                violations.push(Violation::new(at("overlap"), "give either overlap or dephasing, not both"));
                return None;
            }
            (Some(d), None) => d,
            (None, Some(m)) => 1.0 - m,
            (None, None) => 0.0,
        };
        Some(SourceParams {
            label: self.label.clone().unwrap_or_else(|| format!("source-{}", index + 1)),
            transition,
            brightness_first_lens: self.brightness,
            p_two_photon,
            dephasing,
            wavelength: self.wavelength.unwrap_or(DEFAULT_WAVELENGTH),
        })
    }
}

/// Parses and validates TOML text. `origin` names the input in messages.
pub fn parse_config(origin: &Path, text: &str) -> Result<BenchConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::parse(origin, e))?;
    let mut v = Vec::new();
    let sources: Vec<SourceParams> = raw
        .source
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.resolve(i, &mut v))
        .collect();
    match BenchConfig::new(raw.setup, raw.pipeline, sources) {
        Ok(c) if v.is_empty() => Ok(c),
        Ok(_) => Err(Error::Validation(v)),
        Err(Error::Validation(more)) => {
            v.extend(more);
            Err(Error::Validation(v))
        }
        Err(e) => Err(e),
    }
}

pub fn load_config(path: &Path) -> Result<BenchConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(path, &text)
}

/// Serializes a configuration back to the file format.
pub fn to_toml(config: &BenchConfig) -> Result<String> {
    let raw = RawConfig {
        setup: config.setup.clone(),
        pipeline: config.pipeline.clone(),
        source: config.sources.iter().map(entry_from_params).collect(),
    };
    toml::to_string(&raw).map_err(|e| Error::InvalidConfiguration(e.to_string()))
}

fn entry_from_params(s: &SourceParams) -> SourceEntry {
    let (delta_fss, theta_deg) = match &s.transition {
        Transition::Exciton(x) => (Some(x.delta_fss), Some(x.theta.to_degrees())),
        Transition::Trion(_) => (None, None),
    };
    SourceEntry {
        label: Some(s.label.clone()),
        kind: s.kind(),
        tau: s.transition.tau(),
        delta_fss,
        theta_deg,
        brightness: s.brightness_first_lens,
        p_two_photon: Some(s.p_two_photon),
        g2: None,
        dephasing: Some(s.dephasing),
        overlap: None,
        wavelength: Some(s.wavelength),
    }
}
