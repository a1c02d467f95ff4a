//! Library side of the `fggm` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;

pub use config::RunConfig;
pub use error::{CliError, Result};
