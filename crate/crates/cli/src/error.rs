use thiserror::Error;

/// Failures of a pipeline command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, invalid config, or an unusable run directory.
    #[error("{0}")]
    Usage(String),

    /// A stage's input artifact is missing or belongs to another config.
    #[error("{0}")]
    Prerequisite(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error(transparent)]
    Core(gaitdiff_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(_) => 1,
            CliError::Prerequisite(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl From<gaitdiff_core::Error> for CliError {
    fn from(e: gaitdiff_core::Error) -> Self {
        match e {
            gaitdiff_core::Error::Divergence(msg) => CliError::Divergence(msg),
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
