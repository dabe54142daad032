//! Gradient machinery: backward passes, estimator oracles, optimizers and the
//! training loop.
//!
//! Two backward rules share one reverse-mode sweep over the unrolled
//! (layer, time) graph. Noise-driven learning substitutes the membrane noise
//! density for the firing derivative; surrogate-gradient learning substitutes
//! a fixed pseudo-derivative. Both are cross-checked against an exhaustive
//! enumeration oracle and an unbiased local-marginalization estimator.

mod backward;
mod estimator;
mod optimizer;
mod train;

pub use backward::{
    backward, ndl_backward, sgl_backward, BackwardPass, Objective, PseudoDeriv, Surrogate,
    SG_ERF_AT_ZERO,
};
pub use estimator::{
    exact_gradient, local_marg_gradient, local_marg_statistics, sampled_backward_statistics,
    GradStats,
};
pub use optimizer::{cosine_multiplier, OptMethod, OptimizerState};
pub use train::{evaluate, train, EpochRow, Rule, Split, TrainConfig};

use crate::network::Network;
use crate::numerics::Matrix;
use crate::{Error, Result};

/// Gradient of one affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrads {
    fn zeros(rows: usize, cols: usize) -> Self {
        LayerGrads {
            weights: Matrix::zeros(rows, cols),
            bias: vec![0.0; rows],
        }
    }
}

/// Per-layer parameter gradients, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrads>,
    pub readout: LayerGrads,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            readout: LayerGrads::zeros(net.readout.out_dim(), net.readout.in_dim()),
        }
    }

    /// Flatten in the same canonical order as `Network::params_flat`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(self.readout.weights.data());
        out.extend_from_slice(&self.readout.bias);
        out
    }

    pub fn from_flat(net: &Network, flat: &[f64]) -> Result<Self> {
        if flat.len() != net.param_count() {
            return Err(Error::Shape(format!(
                "expected {} gradient entries, got {}",
                net.param_count(),
                flat.len()
            )));
        }
        let mut grads = GradientSet::zeros_like(net);
        let mut cursor = 0;
        for layer in &mut grads.layers {
            let nw = layer.weights.data().len();
            layer.weights.data_mut().copy_from_slice(&flat[cursor..cursor + nw]);
            cursor += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[cursor..cursor + nb]);
            cursor += nb;
        }
        let nw = grads.readout.weights.data().len();
        grads
            .readout
            .weights
            .data_mut()
            .copy_from_slice(&flat[cursor..cursor + nw]);
        cursor += nw;
        grads.readout.bias.copy_from_slice(&flat[cursor..]);
        Ok(grads)
    }

    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data_mut().iter_mut().zip(b.weights.data()) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
        for (x, y) in self
            .readout
            .weights
            .data_mut()
            .iter_mut()
            .zip(other.readout.weights.data())
        {
            *x += scale * y;
        }
        for (x, y) in self.readout.bias.iter_mut().zip(&other.readout.bias) {
            *x += scale * y;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}
