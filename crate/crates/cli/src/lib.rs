//! Command-line front end of the layered-NoC toolkit: experiment configs,
//! the subcommands and sweep reporting.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::CliError;
