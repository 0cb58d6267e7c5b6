use thiserror::Error;

use crate::Shape;

pub type Result<T, E = NumericError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("invalid shape {0:?}: extents must be positive and rank at most 4")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("invalid argument to `{op}`: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("graph cycle detected at node {0}")]
    Cycle(usize),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("parameter file: {0}")]
    Format(String),
    #[error("parameter file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
