use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("gradient error: {0}")]
    Gradient(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
