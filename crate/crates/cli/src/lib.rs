//! File formats and subcommands of the `cmac` command-line tool.

pub mod checkpoint;
pub mod commands;
pub mod compare;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;

pub use error::{CliError, CliResult};
