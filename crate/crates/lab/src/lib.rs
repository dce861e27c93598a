//! Scenario runner for the `yamabe-core` numerical laboratory: scenario
//! files, the pipelines behind each command, and the CSV/JSON artifacts.

pub mod config;
pub mod runner;

pub use config::{parse_config, parse_scenario, Command, ConfigError, Scenario};
pub use runner::{exit_code, run_scenario, RunError, RunOptions, RunSummary};
