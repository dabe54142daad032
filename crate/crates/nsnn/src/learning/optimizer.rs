//! SGD and Adam with a cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptMethod {
    Sgd,
    Adam,
}

/// Cosine annealing multiplier: `0.5 * (1 + cos(pi * step / total))`.
pub fn cosine_multiplier(step: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub method: OptMethod,
    pub base_lr: f64,
    pub total_steps: usize,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl OptimizerState {
    pub fn new(method: OptMethod, base_lr: f64, total_steps: usize, param_count: usize) -> Self {
        OptimizerState {
            method,
            base_lr,
            total_steps,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.base_lr * cosine_multiplier(self.step, self.total_steps)
    }

    /// One parameter update in place.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer sized for {} parameters, got {}/{}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let lr = self.current_lr();
        match self.method {
            OptMethod::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptMethod::Adam => {
                let t = (self.step + 1) as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}
