use pmwpub::Error as CoreError;

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("budget error: {0}")]
    Budget(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Budget(_) => 3,
        }
    }

    pub fn data(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::BudgetExceeded(_) => CliError::Budget(msg),
            CoreError::InvalidSchema(_)
            | CoreError::InvalidRecord(_)
            | CoreError::EmptyDataset
            | CoreError::SchemaMismatch(_)
            | CoreError::DegenerateDistribution
            | CoreError::Unnormalized { .. }
            | CoreError::MissingColumn { .. }
            | CoreError::UnknownCategory { .. }
            | CoreError::OutsideBins { .. }
            | CoreError::BadValue { .. }
            | CoreError::EmptyStratum(_)
            | CoreError::Csv(_)
            | CoreError::Io(_)
            | CoreError::Json(_) => CliError::Data(msg),
            _ => CliError::Config(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
