use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("position lies outside the front sector (bearing {bearing:.4} rad)")]
    OutOfSector { bearing: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trajectory does not cover t = {t} s (valid range [{start}, {end}])")]
    TrajectoryRange { t: f64, start: f64, end: f64 },

    #[error("sweep window [{start}, {end}) exceeds trace of {len} samples")]
    WindowTruncated { start: usize, end: usize, len: usize },

    #[error("low-confidence fix: rays cross at {crossing_deg:.2} deg")]
    LowConfidence { crossing_deg: f64 },

    #[error("log store full ({capacity} bytes)")]
    StoreFull { capacity: usize },

    #[error("invalid preamble id {0} (expected 1 or 2)")]
    InvalidPreamble(u8),

    #[error("access points must share one sweep period (got {0} s and {1} s)")]
    MismatchedPeriods(f64, f64),

    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
