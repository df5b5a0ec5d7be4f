pub mod config;
pub mod data;
pub mod error;
pub mod report;
pub mod runner;

pub use config::{ExperimentConfig, Precision};
pub use error::CliError;
