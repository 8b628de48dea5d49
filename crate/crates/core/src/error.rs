//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the lab's operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A probability vector failed validation (negative entries or bad normalization).
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    /// An operation received an empty input it cannot handle.
    #[error("empty input: {0}")]
    EmptyInput(String),
    /// Paired inputs disagree on length or shape.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A scalar argument is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Configuration file or value could not be parsed or validated.
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// A corpus source is missing one of the extreme pass-rate brackets.
    #[error("source {name} rejected: {reason}")]
    SourceRejected { name: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
