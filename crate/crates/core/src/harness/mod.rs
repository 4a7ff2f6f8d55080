//! Experiment orchestration: configuration, full runs, sweeps and the
//! synthetic bandit benchmark.

pub mod bandit;
pub mod config;
pub mod run;
pub mod sweep;

pub use config::{Policy, RunConfig};
pub use run::{run_experiment, run_on, RunResult, Summary};
