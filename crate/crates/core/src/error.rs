use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed MetaImage header: {0}")]
    Header(String),
    #[error("unsupported ElementType {0:?}")]
    UnsupportedElementType(String),
    #[error("data-length mismatch: header declares {expected} bytes, raw file holds {actual}")]
    DataLength { expected: usize, actual: usize },
    #[error("non-finite or non-positive spacing {0:?}")]
    BadSpacing([f64; 3]),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {0} occurs in the volume but has no table entry")]
    MissingLabel(u8),
    #[error("mask is not binary: found value {0}")]
    NonBinary(u8),
    #[error("undefined distance: {0} mask is empty")]
    UndefinedDistance(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable kind, used for the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Header(_) => "header",
            Error::UnsupportedElementType(_) => "unsupported_element_type",
            Error::DataLength { .. } => "data_length_mismatch",
            Error::BadSpacing(_) => "bad_spacing",
            Error::InvalidVolume(_) => "invalid_volume",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::MissingLabel(_) => "missing_label",
            Error::NonBinary(_) => "non_binary",
            Error::UndefinedDistance(_) => "undefined_distance",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Numerical(_) => "numerical",
            Error::Empty(_) => "empty",
        }
    }
}
