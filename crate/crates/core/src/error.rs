use thiserror::Error;

/// Errors raised by the conformal, estimation and experiment layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MscpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate weights: total likelihood-ratio mass is zero")]
    DegenerateWeights,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("query point lies outside the support of every source")]
    OutOfSupport,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, MscpError>;

impl From<std::io::Error> for MscpError {
    fn from(err: std::io::Error) -> Self {
        MscpError::Io(err.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(MscpError::InvalidInput(msg.into()))
}
