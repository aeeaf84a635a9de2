use thiserror::Error;

/// Errors raised anywhere in the simulation, charting, and tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spatial angle {0} outside [-1, 1]")]
    InvalidAngle(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate CSI: second moment has zero Frobenius norm")]
    DegenerateCsi,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("dataset too short: {len} samples, need more than {needed}")]
    DatasetTooShort { len: usize, needed: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
