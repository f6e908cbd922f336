use std::path::Path;

use stsm_core::CoreError;
use stsm_data::DataError;
use stsm_harness::HarnessError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_) | CoreError::Shape(_) | CoreError::Contract(_) => CliError::Config(msg),
            CoreError::NonFinite(_) => CliError::Numeric(msg),
            CoreError::Checkpoint(_) => CliError::Data(msg),
            CoreError::Io(_) => CliError::Io(msg),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let msg = e.to_string();
        match e {
            DataError::Config(_) => CliError::Config(msg),
            DataError::Shortfall { .. } | DataError::Format(_) => CliError::Data(msg),
            DataError::Io(_) => CliError::Io(msg),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => CliError::Config(m),
            HarnessError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            HarnessError::Core(c) => c.into(),
            HarnessError::Data(d) => d.into(),
            HarnessError::Io(io) => CliError::Io(io.to_string()),
        }
    }
}
