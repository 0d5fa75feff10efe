//! Command-line front end for the food chain solvers: configuration loading, subcommand
//! dispatch and artifact output.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` also rejects NaN

pub mod commands;
pub mod config;

pub use commands::{execute, CliError, Report};
pub use config::{load_config, parse_config, ConfigError, Mode, Overrides, RunConfig};
