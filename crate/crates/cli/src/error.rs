use thiserror::Error;

/// Validation problems exit with 2, everything else with 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<gamps_core::Error> for CliError {
    fn from(e: gamps_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

pub type CliResult<T> = std::result::Result<T, CliError>;
