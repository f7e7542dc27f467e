//! Command implementations behind the `optdist` binary. Exposed as a
//! library so integration tests can drive the exact command code paths.

pub mod commands;
pub mod config;

/// A command failure with the message printed as the machine-parsable
/// `error: ...` line.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub message: String,
}

impl CliError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl From<optdist_core::Error> for CliError {
    fn from(e: optdist_core::Error) -> Self {
        CliError::new(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(e.to_string())
    }
}
