use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator, metering or control stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("value {value} outside range [{lo}, {hi}]: {what}")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid bias currents: {0}")]
    InvalidBias(String),

    #[error("model parameter error: {0}")]
    ModelParameter(String),

    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("directive {index}: {msg}")]
    Semantic { index: usize, msg: String },

    #[error("event out of order: t={t_us} us after t={last_us} us")]
    Ordering { t_us: u64, last_us: u64 },

    #[error("histogram is not a normalized density (mass {mass})")]
    Histogram { mass: f64 },

    #[error("numeric fault at t={t_s} s: {msg}")]
    Numeric { t_s: f64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
