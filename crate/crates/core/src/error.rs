use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single broken invariant on a parameter record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {}", join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("emission density cannot be sampled: {0}")]
    Unsamplable(String),

    #[error("no emission maximum: {0}")]
    NoMaximum(String),

    #[error("kernel undersampled: grid step {step} ps exceeds fwhm/4 = {limit} ps")]
    Resolution { step: f64, limit: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("undefined normalization: {0}")]
    UndefinedNormalization(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("cannot classify transition: {0}")]
    Unclassifiable(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unknown report format `{0}` (expected table, json or csv)")]
    UnknownFormat(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl fmt::Display) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
