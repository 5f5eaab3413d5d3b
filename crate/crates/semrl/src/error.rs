//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by corpus generation, scoring, reward shaping, policy
/// training, and the pipeline driver.
#[derive(Debug, Error)]
pub enum SemrlError {
    /// A caller-supplied value violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rejection sampling could not produce enough distinct documents.
    #[error("corpus generation exhausted: {0}")]
    GenerationExhausted(String),

    /// A configuration file or field failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The remote scorer could not be reached after exhausting retries.
    #[error("transport error: {0}")]
    Transport(String),

    /// The remote scorer answered, but with something we cannot use.
    /// Carries the offending payload for debugging.
    #[error("protocol error: {reason} (payload: {payload})")]
    Protocol { reason: String, payload: String },

    /// A numeric computation produced NaN or infinity where it must not.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SemrlError>;
