//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid inputs to a constructor or operation (bad dimensions,
    /// non-finite values, out-of-range parameters).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical routine failed (non-PD kernel matrix, NaN in a chain, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// File I/O or format problems for datasets and serialized models.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
