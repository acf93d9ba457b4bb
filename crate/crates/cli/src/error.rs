use std::path::PathBuf;

use imi_core::ImiError;
use imi_service::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing {}: run `imi {producer}` first", artifact.display())]
    Missing { artifact: PathBuf, producer: &'static str },
    #[error(transparent)]
    Core(#[from] ImiError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(ImiError::Config(_)) => 2,
            CliError::Missing { .. } => 3,
            _ => 1,
        }
    }
}

/// Fails with [`CliError::Missing`] unless `path` exists.
pub fn require(path: PathBuf, producer: &'static str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Missing { artifact: path, producer })
    }
}
