//! Configuration files, run registry, report rendering and the subcommand functions.

pub mod cli;
pub mod config;
pub mod registry;
pub mod report;

pub use cli::CliOptions;
pub use config::{ExperimentConfig, TOY_CONFIG};
pub use registry::{Registry, RunRecord};
