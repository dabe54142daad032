//! Operational surface: configuration, synthetic data, fixtures, task
//! dispatch and artifact persistence for the `nsnn` CLI.

pub mod config;
pub mod dataset;
pub mod fixtures;
pub mod runner;

pub use config::{ExperimentConfig, TaskKind};
pub use dataset::{generate_task, SpikeDataset, SyntheticTaskSpec};
pub use runner::{load_model, run, save_model, RunArtifacts};
