//! Exhaustive enumeration of the joint spike distribution on tiny networks.
//!
//! Spike states form a directed graphical model: within a timestep the layers
//! depend on the layer below, and across timesteps each neuron depends on its
//! own previous state through the carried membrane. Enumeration walks every
//! binary assignment in (timestep, layer, neuron) order, multiplying the
//! per-neuron Bernoulli factors `F(u - v_th)` where each membrane is computed
//! conditional on the assigned upstream and past spikes, resets included.

use crate::network::{trace_loss, Loss, Network};
use crate::neuron::NeuronState;
use crate::{Error, Result};

/// Hard cap on the number of binary spike variables we are willing to walk.
pub const ENUMERATION_GUARD: usize = 24;

/// Identity of one spike variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpikeVar {
    pub t: usize,
    pub layer: usize,
    pub neuron: usize,
}

/// Exact joint distribution over all spike configurations.
///
/// Configuration bit `k` (LSB first) corresponds to `vars[k]`.
#[derive(Debug, Clone)]
pub struct JointDistribution {
    pub vars: Vec<SpikeVar>,
    pub configs: Vec<(u32, f64)>,
}

impl JointDistribution {
    pub fn total_probability(&self) -> f64 {
        self.configs.iter().map(|(_, p)| p).sum()
    }

    /// Marginal firing probability of one spike variable.
    pub fn marginal(&self, var: SpikeVar) -> Option<f64> {
        let k = self.vars.iter().position(|v| *v == var)?;
        Some(
            self.configs
                .iter()
                .filter(|(bits, _)| bits >> k & 1 == 1)
                .map(|(_, p)| p)
                .sum(),
        )
    }
}

fn check_guard(net: &Network, t_steps: usize) -> Result<usize> {
    let n_vars = net.spike_var_count(t_steps);
    if n_vars > ENUMERATION_GUARD {
        return Err(Error::Capacity(format!(
            "{n_vars} spiking neuron-steps exceed the enumeration guard of {ENUMERATION_GUARD}"
        )));
    }
    Ok(n_vars)
}

struct EnumWalker<'a, F> {
    net: &'a Network,
    input_seq: &'a [Vec<f64>],
    visit: F,
    /// Per-step logits accumulated along the current path.
    logits: Vec<Vec<f64>>,
}

impl<'a, F> EnumWalker<'a, F>
where
    F: FnMut(u32, f64, &[Vec<f64>]),
{
    /// Depth-first walk over timesteps. `states` carries the post-reset
    /// membranes conditional on the assignment so far.
    fn walk_step(
        &mut self,
        t: usize,
        states: &[NeuronState],
        bits: u32,
        bit_cursor: usize,
        prob: f64,
    ) -> Result<()> {
        if t == self.input_seq.len() {
            (self.visit)(bits, prob, &self.logits);
            return Ok(());
        }
        let input = self.input_seq[t].clone();
        self.walk_layer(t, 0, states.to_vec(), input, bits, bit_cursor, prob)
    }

    #[allow(clippy::too_many_arguments)]
    fn walk_layer(
        &mut self,
        t: usize,
        l: usize,
        states: Vec<NeuronState>,
        layer_input: Vec<f64>,
        bits: u32,
        bit_cursor: usize,
        prob: f64,
    ) -> Result<()> {
        if l == self.net.layers.len() {
            let logits = self.net.readout.logits(&layer_input)?;
            self.logits.push(logits);
            self.walk_step(t + 1, &states, bits, bit_cursor, prob)?;
            self.logits.pop();
            return Ok(());
        }
        let layer = &self.net.layers[l];
        let scaled: Vec<f64> = layer_input.iter().map(|v| v * layer.input_scale).collect();
        let mut drive = layer.weights.matvec(&scaled)?;
        for (d, b) in drive.iter_mut().zip(&layer.bias) {
            *d += b;
        }
        let n = layer.out_dim();
        let u_pre: Vec<f64> = (0..n)
            .map(|m| layer.lif.tau * states[l].u[m] + drive[m])
            .collect();
        let fire_prob: Vec<f64> = u_pre
            .iter()
            .map(|&u| layer.noise.cdf(u - layer.lif.v_th))
            .collect::<Result<_>>()?;
        // Branch over all spike assignments of this layer at this timestep.
        self.walk_neuron(
            t, l, states, bits, bit_cursor, prob, &u_pre, &fire_prob, 0, 0u32,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn walk_neuron(
        &mut self,
        t: usize,
        l: usize,
        states: Vec<NeuronState>,
        bits: u32,
        bit_cursor: usize,
        prob: f64,
        u_pre: &[f64],
        fire_prob: &[f64],
        m: usize,
        layer_bits: u32,
    ) -> Result<()> {
        let layer = &self.net.layers[l];
        let n = layer.out_dim();
        if m == n {
            let mut new_states = states;
            let mut spikes = vec![0.0; n];
            for k in 0..n {
                let fired = layer_bits >> k & 1 == 1;
                spikes[k] = fired as u8 as f64;
                new_states[l].u[k] = if fired { layer.lif.u_reset } else { u_pre[k] };
            }
            return self.walk_layer(t, l + 1, new_states, spikes, bits, bit_cursor + n, prob);
        }
        let p = fire_prob[m];
        if p > 0.0 {
            self.walk_neuron(
                t,
                l,
                states.clone(),
                bits | 1 << (bit_cursor + m),
                bit_cursor,
                prob * p,
                u_pre,
                fire_prob,
                m + 1,
                layer_bits | 1 << m,
            )?;
        }
        if p < 1.0 {
            self.walk_neuron(
                t,
                l,
                states,
                bits,
                bit_cursor,
                prob * (1.0 - p),
                u_pre,
                fire_prob,
                m + 1,
                layer_bits,
            )?;
        }
        Ok(())
    }
}

fn var_layout(net: &Network, t_steps: usize) -> Vec<SpikeVar> {
    let mut vars = Vec::with_capacity(net.spike_var_count(t_steps));
    for t in 0..t_steps {
        for (l, layer) in net.layers.iter().enumerate() {
            for m in 0..layer.out_dim() {
                vars.push(SpikeVar { t, layer: l, neuron: m });
            }
        }
    }
    vars
}

/// Fold a visitor over every reachable spike configuration.
pub(crate) fn enumerate_fold<F>(net: &Network, input_seq: &[Vec<f64>], visit: F) -> Result<()>
where
    F: FnMut(u32, f64, &[Vec<f64>]),
{
    check_guard(net, input_seq.len())?;
    net.validate()?;
    if input_seq.is_empty() {
        return Err(Error::Shape("input sequence must have T >= 1".into()));
    }
    let states: Vec<NeuronState> = net
        .layers
        .iter()
        .map(|l| NeuronState::at_reset(l.out_dim(), &l.lif))
        .collect();
    let mut walker = EnumWalker {
        net,
        input_seq,
        visit,
        logits: Vec::new(),
    };
    walker.walk_step(0, &states, 0, 0, 1.0)
}

/// Exact joint distribution of all spike states for a tiny network.
pub fn enumerate_joint(net: &Network, input_seq: &[Vec<f64>]) -> Result<JointDistribution> {
    let mut configs = Vec::new();
    enumerate_fold(net, input_seq, |bits, prob, _| configs.push((bits, prob)))?;
    Ok(JointDistribution {
        vars: var_layout(net, input_seq.len()),
        configs,
    })
}

/// Exact expected loss `sum_config p(config) * loss(config)`.
pub fn expected_loss(net: &Network, input_seq: &[Vec<f64>], loss: &Loss) -> Result<f64> {
    let mut acc = 0.0;
    let mut err = None;
    enumerate_fold(net, input_seq, |_, prob, logits| {
        match trace_loss(net, logits, loss) {
            Ok(v) => acc += prob * v,
            Err(e) => err = Some(e),
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(acc),
    }
}
