//! Layered networks of noisy LIF neurons.
//!
//! A network is a stack of fully connected spiking layers topped by a
//! non-spiking, noise-free affine readout. The forward pass produces a
//! [`Trace`] holding everything the backward passes need; tiny networks can
//! additionally be enumerated exactly over all joint spike assignments.

mod enumerate;
mod serial;

pub use enumerate::{
    enumerate_joint, expected_loss, JointDistribution, SpikeVar, ENUMERATION_GUARD,
};
pub use serial::{from_json, to_json, FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::neuron::{self, LifParams, NeuronState, NoiseModel, SimMode};
use crate::numerics::{softmax_cross_entropy, Matrix, RngStream};
use crate::{Error, Result};

/// One fully connected spiking layer: `drive = weights * (input_scale * x) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub lif: LifParams,
    pub noise: NoiseModel,
    /// Optional input scaling ahead of the affine map; identity by default.
    #[serde(default = "default_input_scale")]
    pub input_scale: f64,
}

fn default_input_scale() -> f64 {
    1.0
}

impl LayerSpec {
    pub fn new(weights: Matrix, bias: Vec<f64>, lif: LifParams, noise: NoiseModel) -> Result<Self> {
        let spec = LayerSpec {
            weights,
            bias,
            lif,
            noise,
            input_scale: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "bias length {} vs out_dim {}",
                self.bias.len(),
                self.out_dim()
            )));
        }
        if !self.input_scale.is_finite() {
            return Err(Error::Parameter("input_scale must be finite".into()));
        }
        self.lif.validated()?;
        self.noise.validated()?;
        Ok(())
    }

    fn drive(&self, x: &[f64]) -> Result<Vec<f64>> {
        let scaled: Vec<f64> = x.iter().map(|v| v * self.input_scale).collect();
        let mut d = self.weights.matvec(&scaled)?;
        for (di, b) in d.iter_mut().zip(&self.bias) {
            *di += b;
        }
        Ok(d)
    }
}

/// Non-spiking affine readout (the predictive head's parameterized map).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutSpec {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ReadoutSpec {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(x)?;
        for (zi, b) in z.iter_mut().zip(&self.bias) {
            *zi += b;
        }
        Ok(z)
    }
}

/// How per-step readouts are combined into a scalar loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Mean of the instantaneous losses over timesteps.
    PerStepMean,
    /// One loss on the time-averaged logits.
    MeanLogits,
}

/// Scalar loss on the readout logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Loss {
    CrossEntropy { target: usize },
    /// `sum_k weights[k] * logits[k]`; affine in the final-layer spikes.
    Linear { weights: Vec<f64> },
}

impl Loss {
    pub fn value(&self, logits: &[f64]) -> Result<f64> {
        match self {
            Loss::CrossEntropy { target } => Ok(softmax_cross_entropy(logits, *target)?.0),
            Loss::Linear { weights } => {
                if weights.len() != logits.len() {
                    return Err(Error::Shape("linear loss weight length".into()));
                }
                Ok(weights.iter().zip(logits).map(|(w, z)| w * z).sum())
            }
        }
    }

    pub fn grad(&self, logits: &[f64]) -> Result<Vec<f64>> {
        match self {
            Loss::CrossEntropy { target } => Ok(softmax_cross_entropy(logits, *target)?.1),
            Loss::Linear { weights } => {
                if weights.len() != logits.len() {
                    return Err(Error::Shape("linear loss weight length".into()));
                }
                Ok(weights.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<LayerSpec>,
    pub readout: ReadoutSpec,
    pub loss_mode: LossMode,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>, readout: ReadoutSpec, loss_mode: LossMode) -> Result<Self> {
        let net = Network {
            layers,
            readout,
            loss_mode,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network needs at least one spiking layer".into()));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for w in self.layers.windows(2) {
            if w[1].in_dim() != w[0].out_dim() {
                return Err(Error::Shape(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        let last = self.layers.last().unwrap();
        if self.readout.in_dim() != last.out_dim() {
            return Err(Error::Shape(format!(
                "readout input dim {} vs final layer dim {}",
                self.readout.in_dim(),
                last.out_dim()
            )));
        }
        if self.readout.bias.len() != self.readout.out_dim() {
            return Err(Error::Shape("readout bias length".into()));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.readout.out_dim()
    }

    /// Total spiking neuron-steps for a simulation of length `t_steps`.
    pub fn spike_var_count(&self, t_steps: usize) -> usize {
        t_steps * self.layers.iter().map(|l| l.out_dim()).sum::<usize>()
    }

    /// Number of scalar parameters (all layers plus the readout).
    pub fn param_count(&self) -> usize {
        let layer_params: usize = self
            .layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum();
        layer_params + self.readout.weights.data().len() + self.readout.bias.len()
    }

    /// Flatten all parameters in canonical order: layers in depth order
    /// (weights row-major, then bias), readout last.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(self.readout.weights.data());
        out.extend_from_slice(&self.readout.bias);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut cursor = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.data().len();
            layer.weights.data_mut().copy_from_slice(&flat[cursor..cursor + nw]);
            cursor += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[cursor..cursor + nb]);
            cursor += nb;
        }
        let nw = self.readout.weights.data().len();
        self.readout
            .weights
            .data_mut()
            .copy_from_slice(&flat[cursor..cursor + nw]);
        cursor += nw;
        self.readout.bias.copy_from_slice(&flat[cursor..]);
        Ok(())
    }

    /// Stochastic or deterministic forward simulation.
    pub fn forward(
        &self,
        input_seq: &[Vec<f64>],
        mode: SimMode,
        rng: &mut RngStream,
        loss: Option<&Loss>,
    ) -> Result<Trace> {
        self.forward_internal(input_seq, mode, rng, loss, None)
    }

    /// Forward pass where every sampled hidden spike state is flipped with
    /// probability `flip_beta` before it propagates anywhere (reset included).
    pub(crate) fn forward_internal(
        &self,
        input_seq: &[Vec<f64>],
        mode: SimMode,
        rng: &mut RngStream,
        loss: Option<&Loss>,
        flip_beta: Option<f64>,
    ) -> Result<Trace> {
        if input_seq.is_empty() {
            return Err(Error::Shape("input sequence must have T >= 1".into()));
        }
        for x in input_seq {
            if x.len() != self.in_dim() {
                return Err(Error::Shape(format!(
                    "input dim {} vs layer 1 dim {}",
                    x.len(),
                    self.in_dim()
                )));
            }
        }
        let t_steps = input_seq.len();
        let mut states: Vec<NeuronState> = self
            .layers
            .iter()
            .map(|l| NeuronState::at_reset(l.out_dim(), &l.lif))
            .collect();
        let mut steps = Vec::with_capacity(t_steps);
        let mut logits_per_step = Vec::with_capacity(t_steps);
        for x_t in input_seq {
            let mut records = Vec::with_capacity(self.layers.len());
            let mut layer_input = x_t.clone();
            for (l, layer) in self.layers.iter().enumerate() {
                let drive = layer.drive(&layer_input)?;
                let draws: Vec<f64> = match mode {
                    SimMode::Sample => (0..layer.out_dim()).map(|_| rng.sample_uniform()).collect(),
                    SimMode::Deterministic => Vec::new(),
                };
                let mut out = neuron::step_given_draws(
                    &states[l],
                    &drive,
                    &layer.lif,
                    &layer.noise,
                    &draws,
                    mode,
                )?;
                if let Some(beta) = flip_beta {
                    for m in 0..out.spikes.len() {
                        if rng.sample_uniform() < beta {
                            let flipped = 1 - out.spikes[m];
                            out.spikes[m] = flipped;
                            out.state.u[m] = if flipped == 1 {
                                layer.lif.u_reset
                            } else {
                                out.u_pre[m]
                            };
                        }
                    }
                }
                states[l] = out.state;
                let scaled_input: Vec<f64> =
                    layer_input.iter().map(|v| v * layer.input_scale).collect();
                let next_input: Vec<f64> = out.spikes.iter().map(|&s| s as f64).collect();
                records.push(LayerStepRecord {
                    input: scaled_input,
                    u_pre: out.u_pre,
                    fire_prob: out.fire_prob,
                    spikes: out.spikes,
                    draws,
                });
                layer_input = next_input;
            }
            logits_per_step.push(self.readout.logits(&layer_input)?);
            steps.push(records);
        }
        let mut trace = Trace {
            mode,
            steps,
            logits: logits_per_step,
            step_losses: None,
            loss: None,
        };
        if let Some(loss) = loss {
            trace.attach_loss(self, loss)?;
        }
        Ok(trace)
    }
}

/// Record of one layer at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStepRecord {
    /// Layer input after input scaling (spikes of the previous layer, or the
    /// scaled external input for layer 1).
    pub input: Vec<f64>,
    /// Pre-reset membrane potentials.
    pub u_pre: Vec<f64>,
    pub fire_prob: Vec<f64>,
    pub spikes: Vec<u8>,
    /// Bernoulli uniforms consumed in sample mode (empty when deterministic);
    /// kept so estimators can replay the trajectory under common random numbers.
    pub draws: Vec<f64>,
}

/// Full forward record consumed by the backward passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub mode: SimMode,
    /// Indexed `steps[t][l]`.
    pub steps: Vec<Vec<LayerStepRecord>>,
    /// Readout logits per timestep.
    pub logits: Vec<Vec<f64>>,
    pub step_losses: Option<Vec<f64>>,
    pub loss: Option<f64>,
}

impl Trace {
    pub fn t_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn n_layers(&self) -> usize {
        self.steps.first().map_or(0, |s| s.len())
    }

    /// Spikes of the final layer as a (neurons x T) matrix.
    pub fn final_layer_spikes(&self) -> Matrix {
        let t_steps = self.t_steps();
        let last = self.n_layers() - 1;
        let n = self.steps[0][last].spikes.len();
        let mut m = Matrix::zeros(n, t_steps);
        for (t, step) in self.steps.iter().enumerate() {
            for (i, &s) in step[last].spikes.iter().enumerate() {
                m.set(i, t, s as f64);
            }
        }
        m
    }

    /// Spike counts of the final layer, one per neuron.
    pub fn final_layer_counts(&self) -> Vec<u32> {
        let last = self.n_layers() - 1;
        let n = self.steps[0][last].spikes.len();
        let mut counts = vec![0u32; n];
        for step in &self.steps {
            for (c, &s) in counts.iter_mut().zip(&step[last].spikes) {
                *c += s as u32;
            }
        }
        counts
    }

    pub fn mean_logits(&self) -> Vec<f64> {
        let t = self.logits.len() as f64;
        let mut mean = vec![0.0; self.logits[0].len()];
        for z in &self.logits {
            for (m, zi) in mean.iter_mut().zip(z) {
                *m += zi / t;
            }
        }
        mean
    }

    /// Compute and store the loss for this trace under the network's
    /// aggregation mode.
    pub fn attach_loss(&mut self, net: &Network, loss: &Loss) -> Result<f64> {
        let total = match net.loss_mode {
            LossMode::PerStepMean => {
                let mut per_step = Vec::with_capacity(self.logits.len());
                for z in &self.logits {
                    per_step.push(loss.value(z)?);
                }
                let mean = per_step.iter().sum::<f64>() / per_step.len() as f64;
                self.step_losses = Some(per_step);
                mean
            }
            LossMode::MeanLogits => loss.value(&self.mean_logits())?,
        };
        self.loss = Some(total);
        Ok(total)
    }

    /// Predicted class: argmax of the time-averaged logits.
    pub fn predicted_class(&self) -> usize {
        let mean = self.mean_logits();
        mean.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Scalar loss of a trace under `net.loss_mode` without storing it.
pub fn trace_loss(net: &Network, logits: &[Vec<f64>], loss: &Loss) -> Result<f64> {
    match net.loss_mode {
        LossMode::PerStepMean => {
            let mut acc = 0.0;
            for z in logits {
                acc += loss.value(z)?;
            }
            Ok(acc / logits.len() as f64)
        }
        LossMode::MeanLogits => {
            let t = logits.len() as f64;
            let mut mean = vec![0.0; logits[0].len()];
            for z in logits {
                for (m, zi) in mean.iter_mut().zip(z) {
                    *m += zi / t;
                }
            }
            loss.value(&mean)
        }
    }
}
