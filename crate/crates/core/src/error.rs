//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed archive: {0}")]
    MalformedArchive(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown unit symbol: {0}")]
    UnknownUnit(String),

    #[error("unknown speaker: {0}")]
    UnknownSpeaker(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("pipeline stage mismatch: expected {expected}, got {got}")]
    StageMismatch { expected: String, got: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("decode failure: {0}")]
    Decode(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
