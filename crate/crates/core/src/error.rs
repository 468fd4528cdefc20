use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid calibration, pose, voxel size, threshold or other parameter.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed binary or JSON payload. `offset` is a byte offset for binary
    /// formats and 0 for whole-document JSON failures.
    #[error("format error in {path}: {message} (at byte offset {offset})")]
    Format { path: String, offset: u64, message: String },

    #[error("lookup error: {0}")]
    Lookup(String),

    /// A mask provider returned a mask that does not contain its prompt pixel.
    #[error("mask provider contract violation: {0}")]
    ContractViolation(String),

    /// Invalid synthetic scene description.
    #[error("scene spec error: {0}")]
    Spec(String),

    #[error("stage `{stage}` is missing its input {}", path.display())]
    MissingInput { stage: String, path: PathBuf },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            offset,
            message: message.into(),
        }
    }
}
