use std::io;

use thiserror::Error;

/// Errors produced by the library and surfaced by the CLI and FFI layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration at layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for errors caused by caller input (bad flags, bad files) as
    /// opposed to failures while running.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::NonFinite(_) | Error::State(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
