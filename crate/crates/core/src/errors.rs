use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config parse error at {file}:{line}: {msg}")]
    ConfigParse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset error in {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("download of {url} failed{}: {msg}", if *.retriable { " (retriable)" } else { "" })]
    Download {
        url: String,
        msg: String,
        retriable: bool,
    },

    #[error("weights container error in {path}: {msg}")]
    Weights { path: PathBuf, msg: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("predictor run failed: {0}")]
    PredictorFailed(String),

    #[error("missing grid cells: {0:?}")]
    MissingGridCells(Vec<String>),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{0}")]
    Invalid(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dataset(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
