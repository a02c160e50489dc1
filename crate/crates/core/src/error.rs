use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset layout error at {path}: {msg}")]
    Layout { path: PathBuf, msg: String },

    #[error("duplicate record for {path}")]
    Duplicate { path: PathBuf },

    #[error("empty source: {path} yielded no frames")]
    EmptySource { path: PathBuf },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Nn(#[from] fas_nn::NnError),

    #[error("json error at {path}: {msg}")]
    Json { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CoreError::Image {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn layout(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CoreError::Layout {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn json(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CoreError::Json {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
