//! Datasets, metrics, configuration and end-to-end experiment runs.

pub mod config;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod persist;

pub use config::{ExperimentConfig, Scenario, TruthSource};
pub use experiment::{evaluate, observe, run_experiment, train_gan, ExperimentSummary};
pub use metrics::{match_sources, mse, psnr, MetricsReport};
