//! Configuration, verbs and report files of the `seedbo` command-line tool.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{
    cmd_iteration_study, cmd_optimize, cmd_reference, cmd_simulate, cmd_sweep_mu,
    cmd_validate_config, run_optimization, write_optimization,
};
pub use config::{Overrides, RunConfig};
