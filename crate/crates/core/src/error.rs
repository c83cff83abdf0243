use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {record}: {message}")]
    Parse { record: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate bounding box (h = {h}, w = {w})")]
    DegenerateBox { h: f64, w: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite objective at epoch {epoch}")]
    NonFiniteObjective { epoch: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status conventionally associated with this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } | Error::Serialize(_) => 1,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::DegenerateBox { .. }
            | Error::DimensionMismatch { .. }
            | Error::EmptyInput(_) => 2,
            Error::NonFiniteObjective { .. } | Error::Numerical(_) => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}
