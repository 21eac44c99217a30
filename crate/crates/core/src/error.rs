use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box {0}")]
    InvalidBox(String),

    #[error("box out of bounds: {0}")]
    OutOfBounds(String),

    #[error("unknown relation '{0}'")]
    UnknownRelation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("duplicate label '{0}' in vocabulary")]
    DuplicateLabel(String),

    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cannot parse caption {text:?} (closest template: {nearest})")]
    Caption { text: String, nearest: String },

    #[error("not enough objects: {0}")]
    NotEnoughObjects(String),

    #[error("not enough triplets: requested {requested}, only {available} available")]
    NotEnoughTriplets { requested: usize, available: usize },

    #[error("detection sets do not match captions: {0}")]
    DetectionMismatch(String),

    #[error("reports cover different caption sets")]
    CaptionSetMismatch,

    #[error("sampling failed: {0}")]
    SamplingFailed(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// `true` for errors caused by input data rather than by usage or bugs.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
