use thiserror::Error;

/// Errors raised by the estimation routines and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoneError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty index set")]
    EmptyIndexSet,

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("batch size {m} exceeds sample count {n}")]
    BatchTooLarge { m: usize, n: usize },

    #[error("shard sizes sum to {sum}, dataset has {n} samples")]
    ShardSizeMismatch { sum: usize, n: usize },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("iterate diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<FoneError>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("tuning failed, every candidate scored non-finite: {0:?}")]
    TuningFailed(Vec<(f64, String)>),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, FoneError>;

impl From<std::io::Error> for FoneError {
    fn from(e: std::io::Error) -> Self {
        FoneError::Io(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(FoneError::DimensionMismatch { expected, actual });
    }
    Ok(())
}
