//! Bundled fixtures for gradient checking.
//!
//! One small network — two inputs, one spiking layer of two noisy LIF
//! neurons, a two-class readout — is shared by the estimator cross-checks.
//! Weights put the membranes within a noise scale of threshold so every
//! Bernoulli factor and density in the gradient machinery is exercised.

use crate::network::{LayerSpec, LossMode, Network, ReadoutSpec};
use crate::neuron::{LifParams, NoiseModel};
use crate::numerics::Matrix;

pub fn grad_check_net() -> Network {
    grad_check_net_with_noise(NoiseModel::gaussian(0.3).expect("fixture noise"))
}

pub fn grad_check_net_with_noise(noise: NoiseModel) -> Network {
    let layer = LayerSpec::new(
        Matrix::from_rows(&[vec![0.8, 0.4], vec![0.3, 0.9]]).expect("fixture weights"),
        vec![0.1, -0.2],
        LifParams::default(),
        noise,
    )
    .expect("fixture layer");
    Network::new(
        vec![layer],
        ReadoutSpec {
            weights: Matrix::from_rows(&[vec![1.2, -0.7], vec![-0.5, 1.0]])
                .expect("fixture readout"),
            bias: vec![0.05, -0.05],
        },
        LossMode::PerStepMean,
    )
    .expect("fixture network")
}

/// Input sequence for the fixture: a fixed four-step cycle.
pub fn grad_check_input(t_steps: usize) -> Vec<Vec<f64>> {
    let cycle = [
        vec![1.0, 0.5],
        vec![0.25, 1.0],
        vec![0.75, 0.25],
        vec![0.5, 1.0],
    ];
    (0..t_steps).map(|t| cycle[t % cycle.len()].clone()).collect()
}
