//! Experiment orchestration and file I/O for the `eelab` command.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod pnm;

pub use config::{load_config, Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use experiments::run_experiment;
