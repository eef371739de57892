use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The regularized covariance could not be factorized. Indicates a
    /// corrupted state (non-finite entries or a matrix the ridge cannot lift
    /// to positive definite).
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("format error: {0}")]
    Format(String),

    /// The byte stream ended inside a record. `record` is the zero-based index
    /// of the incomplete record, `offset` the byte offset where it started.
    #[error("truncated stream: record {record} starting at byte {offset} is incomplete")]
    Truncated { record: u64, offset: u64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
