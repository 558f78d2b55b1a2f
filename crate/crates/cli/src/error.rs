use thiserror::Error;

/// Failure of a run, classified for the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input files.
    #[error("{0}")]
    Validation(String),
    /// A computation failed on valid inputs.
    #[error("{0}")]
    Numerical(String),
    #[error("writing results: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) | CliError::Output(_) => 1,
        }
    }
}

/// Attaches the config key responsible for a library error.
pub fn at<T>(key: &str, result: mpval::Result<T>) -> Result<T, CliError> {
    result.map_err(|e| {
        if e.is_validation() {
            CliError::Validation(format!("{key}: {e}"))
        } else {
            CliError::Numerical(format!("{key}: {e}"))
        }
    })
}
