use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] wassoed_core::Error),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("self-check failed: {0}")]
    Acceptance(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit status: 2 usage, 3 numeric or solver failure, 4 failed
    /// self-check.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(wassoed_core::Error::Argument(_) | wassoed_core::Error::Parse { .. }) => 2,
            CliError::Core(_) | CliError::Io(_) | CliError::Numeric(_) => 3,
            CliError::Acceptance(_) => 4,
        }
    }
}
