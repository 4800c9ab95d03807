use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: unsupported container version {version}")]
    UnsupportedVersion { path: PathBuf, version: u8 },

    #[error("{path}: unknown dtype code {code}")]
    UnknownDtype { path: PathBuf, code: u8 },

    #[error("{path}: dtype mismatch, expected {expected}, found {found}")]
    DtypeMismatch {
        path: PathBuf,
        expected: &'static str,
        found: &'static str,
    },

    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {found} trailing bytes after payload")]
    TrailingBytes { path: PathBuf, found: usize },

    #[error("{context}: non-finite value at element {index}")]
    NonFinite { context: String, index: usize },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("manifest {path}: duplicate slice ids {ids:?}")]
    DuplicateIds { path: PathBuf, ids: Vec<String> },

    #[error("manifest {path}: missing files for slices {ids:?}")]
    MissingFiles { path: PathBuf, ids: Vec<String> },

    #[error("manifest {path}: label/image dims mismatch for slices {ids:?}")]
    DimMismatch { path: PathBuf, ids: Vec<String> },

    #[error("manifest {path}: invalid slices {ids:?}: {reason}")]
    InvalidSlices {
        path: PathBuf,
        ids: Vec<String>,
        reason: String,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("slice {slice_id}: {source}")]
    Slice {
        slice_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_slice(self, slice_id: &str) -> Self {
        Error::Slice {
            slice_id: slice_id.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
