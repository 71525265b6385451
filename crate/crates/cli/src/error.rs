use jointdrive::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(CoreError::Json(e))
    }
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_OTHER,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::InvalidBehavior(_) => EXIT_CONFIG,
                CoreError::Data(_)
                | CoreError::EmptyDataset
                | CoreError::Json(_)
                | CoreError::Checkpoint(_)
                | CoreError::LengthMismatch { .. }
                | CoreError::MissingVehicle(_) => EXIT_DATA,
                CoreError::Numerics(_) | CoreError::NonFinite(_) => EXIT_NUMERIC,
                CoreError::Sim(_) | CoreError::Io(_) => EXIT_OTHER,
            },
        }
    }
}

impl From<jointdrive::DataError> for CliError {
    fn from(e: jointdrive::DataError) -> Self {
        CliError::Core(CoreError::Data(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use jointdrive_numerics::NumericsError;

    #[test]
    fn exit_codes_are_distinct_per_category() {
        let config = CliError::Config("x".into()).exit_code();
        let data = CliError::from(jointdrive::DataError::Truncated { line: 3 }).exit_code();
        let numeric = CliError::Core(CoreError::Numerics(NumericsError::NonFinite("x".into()))).exit_code();
        let other = CliError::Io(std::io::Error::other("x")).exit_code();
        assert_eq!((config, data, numeric, other), (EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OTHER));
        assert!(![config, data, numeric].contains(&0));
        assert_eq!(CliError::Core(CoreError::EmptyDataset).exit_code(), EXIT_DATA);
    }
}
