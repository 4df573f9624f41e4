//! Command-line driver and review server for `peakrep-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod server;

pub use cli::Cli;
pub use commands::run;
pub use error::{CliError, CliResult};
