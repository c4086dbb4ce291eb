use std::io;

use rocp_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum RocpError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl RocpError {
    /// Process exit status: 2 for bad configuration or input, 3 for a
    /// numerical failure, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Core(CoreError::SingularSystem | CoreError::NumericalFailure { .. }) => 3,
            Self::Core(_) => 2,
            Self::Io(_) | Self::Format(_) | Self::Csv(_) => 1,
        }
    }
}

pub type Result<T, E = RocpError> = std::result::Result<T, E>;
