use std::path::PathBuf;

use bgop_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("decode error in unit {unit}: {reason}")]
    Decode { unit: usize, reason: String },
    #[error("container error at byte {offset}: {reason}")]
    Container { offset: usize, reason: String },
    #[error("entropy coder error (status {status}) at symbol {index}")]
    Coder { status: i32, index: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("data error in {path}: {reason}")]
    Data { path: PathBuf, reason: String },
    #[error("training error: {0}")]
    Training(String),
    #[error("environment error: {0}")]
    Environment(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Data { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
