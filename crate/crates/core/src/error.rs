use jointdrive_numerics::NumericsError;
use jointdrive_sim::SimError;
use thiserror::Error;

/// Dataset file problems, reported with the offending line where known.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0} does not exist")]
    Missing(String),
    #[error("dataset version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error("file truncated at line {line}")]
    Truncated { line: usize },
    #[error("index lists {index} samples but the file holds {actual}")]
    CountMismatch { index: usize, actual: usize },
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("behavior index {0} is out of range")]
    InvalidBehavior(usize),
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("vehicle {0} not present")]
    MissingVehicle(u32),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
