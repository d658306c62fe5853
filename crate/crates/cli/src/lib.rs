//! Command implementations for the `paraformer` binary.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use commands::{cmd_eval, cmd_gen, cmd_search, cmd_train, CliError, CliResult};
pub use config::RunConfig;
