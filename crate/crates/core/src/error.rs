use std::io;

use thiserror::Error;

/// Errors raised across the frame-selection pipeline.
#[derive(Debug, Error)]
pub enum LfsError {
    #[error("format error: {0}")]
    Format(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("spec error: {0}")]
    Spec(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("numerics error: {0}")]
    Numerics(String),
}

impl LfsError {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        LfsError::Format(msg.into())
    }
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        LfsError::Data(msg.into())
    }
    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        LfsError::Spec(msg.into())
    }
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        LfsError::Shape(msg.into())
    }
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        LfsError::Param(msg.into())
    }
}

impl From<serde_json::Error> for LfsError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            LfsError::Io(e.into())
        } else {
            LfsError::Format(e.to_string())
        }
    }
}

impl From<csv::Error> for LfsError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => LfsError::Io(io),
                other => LfsError::Format(format!("{other:?}")),
            }
        } else {
            LfsError::Format(e.to_string())
        }
    }
}

pub type Result<T, E = LfsError> = std::result::Result<T, E>;
