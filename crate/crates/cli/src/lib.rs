//! Batch front end for the cascade Stokes solver: configuration parsing,
//! command dispatch and artifact output.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{dispatch, exit_status, load_config, Command, Options, Report};
pub use config::{parse_config, RunConfig};
pub use error::CliError;
