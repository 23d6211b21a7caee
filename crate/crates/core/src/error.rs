use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the curation, fusion, training and evaluation stages.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is out of its valid domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A structured header or sidecar field is missing or malformed.
    #[error("format error in field `{field}`: {message}")]
    Format { field: String, message: String },

    /// Declared sizes disagree with the payload, or records contradict each other.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A record carries values that cannot be processed (e.g. a zero-norm vector).
    #[error("data error for record `{id}`: {message}")]
    Data { id: String, message: String },

    /// The input is well-formed but the operation is undefined for it.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two branch features could not be paired.
    #[error("pairing error: {0}")]
    Pairing(String),

    /// A branch feature required for fusion is absent.
    #[error("branch `{branch}` unavailable for id `{id}`")]
    Availability { id: String, branch: String },

    #[error("pipeline validation failed: {0}")]
    Validation(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
