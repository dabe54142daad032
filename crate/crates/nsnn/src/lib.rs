//! Desk-scale noisy spiking neural network engine.
//!
//! The crate simulates networks of noisy leaky integrate-and-fire neurons
//! whose firing is probabilistic, trains them with noise-driven gradient
//! estimators that are cross-checked against exhaustive enumeration oracles,
//! and ships a continuous-time stability lab plus robustness and neural
//! coding analysis tools. Everything is driven from the `nsnn` CLI binary.

pub mod analysis;
pub mod harness;
pub mod learning;
pub mod network;
pub mod neuron;
pub mod numerics;
pub mod perturb;
pub mod stability;

use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes in `main`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("capacity guard exceeded: {0}")]
    Capacity(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("divergence at step {step}: {message}")]
    Divergence { step: usize, message: String },
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("attack failed: {0}")]
    Attack(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("model format version {found} not supported (expected {expected})")]
    FormatVersion { expected: u32, found: u32 },
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
