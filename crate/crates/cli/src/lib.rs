//! Configuration-driven experiment runner: config parsing, solver sweeps,
//! CSV reports and their comparison.

pub mod config;
pub mod kupradze_checks;
pub mod report;
pub mod runner;

pub use config::{ConfigError, Experiment, ExperimentConfig, Method};
pub use report::{compare, CompareReport, SolveRow, Table};
pub use runner::{run, RunError, RunOutcome};
