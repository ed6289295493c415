use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input domain error: {0}")]
    InputDomain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("controller fault: {0}")]
    ControllerFault(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing reference values for layout `{0}`")]
    MissingReferences(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
