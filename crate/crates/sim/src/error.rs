use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite control for vehicle {id}: steer={steer}, throttle={throttle}, brake={brake}")]
    NonFiniteControl {
        id: u32,
        steer: f64,
        throttle: f64,
        brake: f64,
    },
    #[error("unknown vehicle id {0}")]
    UnknownVehicle(u32),
    #[error("vehicle {0} has no usable route")]
    NoRoute(u32),
    #[error("expected {expected} control commands, got {got}")]
    ControlCount { expected: usize, got: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unsupported scenario schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("episode log is empty")]
    EmptyLog,
    #[error("agent failed: {0}")]
    Agent(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
