//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Referenced data (frames, journeys, files) is missing or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// An iterative numerical procedure failed to converge.
    #[error("numerical error: {what} (after {iterations} iterations)")]
    Numerical { what: String, iterations: usize },

    /// A file does not conform to one of the on-disk formats.
    #[error("format error in {path} at offset {offset}: {what}")]
    Format {
        path: String,
        offset: u64,
        what: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn format(path: impl Into<String>, offset: u64, what: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            what: what.into(),
        }
    }
}
