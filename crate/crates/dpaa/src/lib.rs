//! File formats, configuration and experiment workflows around `dpaa-core`.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod formats;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::{Dataset, Prepared};
