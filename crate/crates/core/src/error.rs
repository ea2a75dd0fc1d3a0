use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instrument: {0}")]
    InvalidInstrument(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("empty file")]
    EmptyFile,

    #[error("{path}:{line}: {msg}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate timestamp {timestamp} at line {line}")]
    DuplicateTimestamp { timestamp: i64, line: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("empty in-sample")]
    EmptyInSample,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("fit did not converge after {iterations} iterations (best log-likelihood {best_log_likelihood})")]
    NonConvergence {
        iterations: usize,
        best_log_likelihood: f64,
        best: Box<crate::qstats::QGaussianModel>,
    },

    #[error("fit failed at lag {lag}: {source}")]
    LagFit {
        lag: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("warm-up of {warmup} bars does not fit in a series of {len} bars")]
    WarmupTooLong { warmup: usize, len: usize },

    #[error("empty feasible search space")]
    EmptySearchSpace,

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
