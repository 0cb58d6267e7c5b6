use rpred_numeric::NumericError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("agent index {index} out of range for {count} agents")]
    AgentIndex { index: usize, count: usize },
    #[error("non-finite coordinate in {0}")]
    NonFiniteCoordinate(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("dataset schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },
    #[error("csv: {0}")]
    Csv(String),
    #[error("missing ground-truth future for agent {0}")]
    MissingFuture(usize),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error: 2 validation, 3 I/O, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            Error::Numeric(NumericError::Io(_)) => 3,
            Error::NonFiniteLoss { .. } => 4,
            Error::Numeric(NumericError::NonFinite { .. }) => 4,
            _ => 2,
        }
    }
}
