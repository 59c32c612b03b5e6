use thiserror::Error;

/// Errors produced by tensor, model, and jackknife operations.
#[derive(Debug, Error)]
pub enum CpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid mode {mode} for a tensor with {ndims} modes")]
    InvalidMode { mode: usize, ndims: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CpError>;
