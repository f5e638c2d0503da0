//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A forward pass or loss produced NaN/Inf.
    #[error("non-finite value in {0}")]
    Numeric(String),

    /// Text-format parse failure with source location.
    #[error("parse error in {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Binary file (checkpoint, sidecar) structure violation.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Dataset/scene-level validation failure.
    #[error("invalid scene: {0}")]
    Scene(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn scene(msg: impl Into<String>) -> Self {
        Error::Scene(msg.into())
    }
}
