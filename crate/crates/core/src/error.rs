//! Error types shared across the simulator, agents and harness.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum SimError {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// One or more configuration fields failed validation.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    /// An operation was called in a state that does not admit it.
    #[error("state error: {0}")]
    State(String),

    /// Tensor or vector shapes do not line up.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// Inputs that must agree (e.g. run configs under comparison) differ.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A persisted artifact could not be parsed.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, SimError>;

impl SimError {
    pub fn domain(msg: impl Into<String>) -> Self {
        SimError::Domain(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        SimError::State(msg.into())
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
