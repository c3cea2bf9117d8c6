//! Scenario runner for the radial fast diffusion lab.
//!
//! A scenario is a TOML file naming one of the experiments in
//! [`config::ScenarioKind`]; [`scenarios::run_scenario`] solves it, runs its
//! checks and writes trajectories, distance tables and a report.

pub mod config;
pub mod scenarios;

use thiserror::Error;

pub use config::{default_config, parse_config, parse_config_with, ScenarioConfig, ScenarioKind};
pub use scenarios::{build_initial_data, run_scenario};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration; exit code 2.
    #[error("configuration error: {0}")]
    Config(String),
    /// Numerical or i/o failure during a run; exit code 1.
    #[error("run failed: {0}")]
    Run(#[from] fastdiff_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}
