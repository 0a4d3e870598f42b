//! Command-line workflows over the `sosgen-core` pipeline.

pub mod commands;
pub mod config;
pub mod plot;

pub use config::ExperimentConfig;
