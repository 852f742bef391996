use std::io;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no valid cells")]
    NoValidCells,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("PE shape mismatch: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    PeShapeMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("coordinate ({0}, {1}) outside [-1, 1]")]
    CoordinateOutOfRange(f64, f64),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("backward called before any forward op was recorded")]
    NoForward,
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },
    #[error("missing checkpoint for variant `{variant}` at {path}")]
    MissingCheckpoint { variant: String, path: String },
    #[error("too few timesteps: {0}")]
    TooFewTimesteps(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            reason: reason.into(),
        }
    }
}
