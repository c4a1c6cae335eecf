use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on '{path}': {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in '{path}': {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("missing mandatory column '{0}'")]
    MissingColumn(String),

    #[error("duplicate timestamp {timestamp} for station '{station}', pollutant '{pollutant}'")]
    DuplicateTimestamp {
        station: String,
        pollutant: String,
        timestamp: String,
    },

    #[error("empty series for station '{station}', pollutant '{pollutant}'")]
    EmptySeries { station: String, pollutant: String },

    #[error("no observed values: {0}")]
    AllMissing(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("abscissa {t} outside interval [{a}, {b}]")]
    OutOfRange { t: f64, a: f64, b: f64 },

    #[error("rank-deficient design matrix: rank {rank} < basis dimension {p}")]
    RankDeficient { rank: usize, p: usize },

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(
        "kernel matrix is not positive semidefinite (Cholesky failed after jitter {jitter:e})"
    )]
    NotPsd { jitter: f64 },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }
}
