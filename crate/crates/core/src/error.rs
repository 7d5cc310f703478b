use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("invalid network spec at layer `{layer}`: {message}")]
    Validation { layer: String, message: String },

    #[error("weight blob `{blob}`: {message}")]
    Blob { blob: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer `{0}` is not spatially local")]
    UnsupportedLayer(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Undefined(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image decode: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn validation(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            layer: layer.into(),
            message: message.into(),
        }
    }

    pub(crate) fn blob(blob: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Blob {
            blob: blob.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
