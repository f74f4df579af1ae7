//! Scenario configuration, the simulation loop, Monte Carlo batching, and
//! result output.

pub mod config;
pub mod output;
pub mod runner;

pub use config::{load_preset, load_scenario, preset_names, Scenario, Strategy};
pub use output::{write_results, OutputFormat};
pub use runner::{run_monte_carlo, run_once, train_vision_table, Aggregate, RunResult, StepRecord};
