use std::process::ExitCode;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Every failure maps to one exit code and prints as a single line
/// `error[<kind>]: <message>`.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Io(String),

    /// A check the command exists to perform did not hold.
    #[error("{0}")]
    Acceptance(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Io(_) => "io",
            CliError::Acceptance(_) => "acceptance",
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Acceptance(_) => 4,
        })
    }

    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.kind())
    }

    pub fn io(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl From<talon_core::Error> for CliError {
    fn from(err: talon_core::Error) -> Self {
        match err {
            talon_core::Error::Io(e) => CliError::Io(e.to_string()),
            talon_core::Error::Csv(e) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}
