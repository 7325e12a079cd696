use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("budget error: {0}")]
    Budget(String),
    #[error("{count} inequality violation(s); first: {first}")]
    Violation { count: usize, first: String },
    #[error(transparent)]
    Core(mtm_core::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(field: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Config(format!("field `{field}`: {msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Parse(_) | CliError::Json(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Violation { .. } => 4,
            CliError::Core(e) => core_code(e),
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

fn core_code(e: &mtm_core::Error) -> i32 {
    use mtm_core::Error as E;
    match e {
        E::EnumerationLimit { .. } | E::TraceTooShort { .. } => 3,
        E::InvalidParameter { .. } | E::UnsupportedTarget(_) | E::InvalidSet(_) => 2,
        E::InequalityViolation { .. } => 4,
        E::Step { source, .. } => core_code(source),
        _ => 1,
    }
}

impl From<mtm_core::Error> for CliError {
    fn from(e: mtm_core::Error) -> Self {
        CliError::Core(e)
    }
}
