//! Command-line harness: run configuration, cached HTTP clients for the
//! external models, report emission, and the `rankcomp` commands.

pub mod cache;
pub mod cli;
pub mod clients;
pub mod config;
pub mod error;
pub mod fsio;
pub mod report;

pub use cli::{execute, resolve_config, Cli, Command, CommonArgs, Summary};
pub use config::RunConfig;
pub use error::HarnessError;
