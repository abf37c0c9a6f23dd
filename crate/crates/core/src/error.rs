//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was called in the wrong order, e.g. backward before forward.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A non-finite value appeared where only finite values are legal.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A pipeline stage failed; the stage name is part of the message so the
    /// CLI can report where things went wrong.
    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error on {path}: {message}")]
    Csv { path: String, message: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn stage(stage: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Stage {
            stage: stage.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
