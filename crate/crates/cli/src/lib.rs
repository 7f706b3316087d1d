//! Experiment orchestration: configuration files, run artifacts, metric
//! summaries, and figure emission around `kaizen-core`.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod figures;

pub use config::ExperimentConfig;
