use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values produced by {0}")]
    NonFinite(String),
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T, E = GradError> = std::result::Result<T, E>;
