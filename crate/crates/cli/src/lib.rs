//! Command-line front end for the sparse deformable Mamba classifier.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

pub use args::{Cli, Command};
pub use commands::run;
pub use error::{CliError, Result};
