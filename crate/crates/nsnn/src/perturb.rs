//! Input-level and spike-state-level perturbations for robustness evaluation.

use serde::{Deserialize, Serialize};

use crate::learning::{backward, Objective, PseudoDeriv, Surrogate};
use crate::network::{Loss, Network, Trace};
use crate::neuron::SimMode;
use crate::numerics::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Fgsm,
    DirectOpt,
    EventDrop,
    SpikeFlip,
}

/// Attack settings; the direct-optimization defaults follow the usual
/// 30-iteration Adam schedule at learning rate 0.002.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// FGSM step size / direct-optimization L2 radius.
    pub gamma: f64,
    /// EventDrop probability.
    pub rho: f64,
    /// Spike flip probability.
    pub beta: f64,
    pub do_iters: usize,
    pub do_lr: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            method: AttackMethod::SpikeFlip,
            gamma: 0.0,
            rho: 0.0,
            beta: 0.0,
            do_iters: 30,
            do_lr: 0.002,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::Parameter("gamma must be >= 0".into()));
        }
        for (name, p) in [("rho", self.rho), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        Ok(())
    }
}

/// How the input gradient of a network is obtained: one deterministic forward
/// with the ERF surrogate, or the average over `k` stochastic forwards with
/// the noise-density factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradSource {
    Deterministic,
    NoisyAveraged { k: usize },
}

impl GradSource {
    /// Default attack gradient for a network: deterministic nets use the
    /// surrogate path, stochastic nets average 8 sampled backward passes.
    pub fn for_network(net: &Network) -> GradSource {
        if net.layers.iter().all(|l| l.noise.is_deterministic()) {
            GradSource::Deterministic
        } else {
            GradSource::NoisyAveraged { k: 8 }
        }
    }
}

/// Gradient of the loss w.r.t. the external input sequence.
pub fn input_gradient(
    net: &Network,
    input_seq: &[Vec<f64>],
    loss: &Loss,
    source: GradSource,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    let objective = Objective::Head(loss.clone());
    match source {
        GradSource::Deterministic => {
            let trace = net.forward(input_seq, SimMode::Deterministic, rng, None)?;
            Ok(backward(net, &trace, &objective, PseudoDeriv::Fixed(Surrogate::Erf))?.input_grads)
        }
        GradSource::NoisyAveraged { k } => {
            if k == 0 {
                return Err(Error::Parameter("gradient sample count must be >= 1".into()));
            }
            let fork = rng.next_u64();
            let base = rng.child(fork);
            let mut acc: Vec<Vec<f64>> = input_seq.iter().map(|x| vec![0.0; x.len()]).collect();
            for s in 0..k {
                let mut sample_rng = base.child(s as u64);
                let trace = net.forward(input_seq, SimMode::Sample, &mut sample_rng, None)?;
                let grads = backward(net, &trace, &objective, PseudoDeriv::NoisePdf)?.input_grads;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (ai, gi) in a.iter_mut().zip(g) {
                        *ai += gi / k as f64;
                    }
                }
            }
            Ok(acc)
        }
    }
}

/// Pure FGSM step: `x + gamma * sign(grad)` with `sign(0) = 0`. The realized
/// perturbation `x_adv - x` is nudged down to the budget where the floating
/// point sum overshoots by an ulp, so the infinity-norm bound holds exactly.
pub fn fgsm_step(x: &[Vec<f64>], grad: &[Vec<f64>], gamma: f64) -> Result<Vec<Vec<f64>>> {
    if gamma < 0.0 {
        return Err(Error::Parameter(format!("gamma must be >= 0, got {gamma}")));
    }
    if x.len() != grad.len() {
        return Err(Error::Shape("input/gradient timestep mismatch".into()));
    }
    Ok(x.iter()
        .zip(grad)
        .map(|(xs, gs)| {
            xs.iter()
                .zip(gs)
                .map(|(&xi, &gi)| {
                    if gi == 0.0 {
                        return xi;
                    }
                    let mut adv = xi + gamma * gi.signum();
                    while (adv - xi).abs() > gamma {
                        adv = if adv > xi { adv.next_down() } else { adv.next_up() };
                    }
                    adv
                })
                .collect()
        })
        .collect())
}

/// Fast gradient sign attack on a static real-valued input sequence.
pub fn fgsm(
    net: &Network,
    input_seq: &[Vec<f64>],
    loss: &Loss,
    gamma: f64,
    source: GradSource,
    rng: &mut RngStream,
    clamp: Option<(f64, f64)>,
) -> Result<Vec<Vec<f64>>> {
    let grad = input_gradient(net, input_seq, loss, source, rng)?;
    let mut adv = fgsm_step(input_seq, &grad, gamma)?;
    if let Some((lo, hi)) = clamp {
        for step in &mut adv {
            for v in step {
                *v = v.clamp(lo, hi);
            }
        }
    }
    Ok(adv)
}

fn l2_norm(delta: &[Vec<f64>]) -> f64 {
    delta
        .iter()
        .flat_map(|s| s.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Project onto the radius-`gamma` L2 sphere. The zero vector projects onto a
/// fixed unit direction (first coordinate) scaled to `gamma`.
fn project_to_sphere(delta: &mut [Vec<f64>], gamma: f64) {
    let n = l2_norm(delta);
    if n == 0.0 {
        if let Some(first) = delta.iter_mut().flat_map(|s| s.iter_mut()).next() {
            *first = gamma;
        }
        return;
    }
    let scale = gamma / n;
    for step in delta.iter_mut() {
        for v in step {
            *v *= scale;
        }
    }
}

/// Adam ascent on a perturbation constrained to the radius-`gamma` L2
/// sphere; the projection runs after every step. The objective is supplied
/// as a closure returning `(loss, gradient w.r.t. the perturbed input)`.
pub fn direct_opt_objective<F>(
    input_seq: &[Vec<f64>],
    mut objective: F,
    gamma: f64,
    iters: usize,
    lr: f64,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)>,
{
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::Parameter(format!("gamma must be > 0, got {gamma}")));
    }
    let dims: usize = input_seq.iter().map(|s| s.len()).sum();
    let mut delta: Vec<Vec<f64>> = input_seq.iter().map(|s| vec![0.0; s.len()]).collect();
    if iters == 0 {
        project_to_sphere(&mut delta, gamma);
        return Ok(add(input_seq, &delta));
    }
    let mut m = vec![0.0; dims];
    let mut v = vec![0.0; dims];
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    for it in 0..iters {
        let adv = add(input_seq, &delta);
        let (loss_now, grad) = objective(&adv)?;
        if !loss_now.is_finite() {
            return Err(Error::Attack(format!("non-finite loss at iteration {it}")));
        }
        let flat: Vec<f64> = grad.iter().flat_map(|s| s.iter().copied()).collect();
        if flat.len() != dims {
            return Err(Error::Shape("objective gradient shape mismatch".into()));
        }
        let bc1 = 1.0 - pow_usize(beta1, it + 1);
        let bc2 = 1.0 - pow_usize(beta2, it + 1);
        let mut cursor = 0;
        for step in delta.iter_mut() {
            for d in step.iter_mut() {
                let g = flat[cursor];
                m[cursor] = beta1 * m[cursor] + (1.0 - beta1) * g;
                v[cursor] = beta2 * v[cursor] + (1.0 - beta2) * g * g;
                let m_hat = m[cursor] / bc1;
                let v_hat = v[cursor] / bc2;
                // ascent on the loss
                *d += lr * m_hat / (v_hat.sqrt() + eps);
                cursor += 1;
            }
        }
        project_to_sphere(&mut delta, gamma);
    }
    Ok(add(input_seq, &delta))
}

/// Constrained attack `argmax_{||dx||_2 = gamma} loss(net(x + dx), y)`.
#[allow(clippy::too_many_arguments)]
pub fn direct_opt(
    net: &Network,
    input_seq: &[Vec<f64>],
    loss: &Loss,
    gamma: f64,
    iters: usize,
    lr: f64,
    source: GradSource,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    let mut it = 0u64;
    direct_opt_objective(
        input_seq,
        |adv| {
            let grad = input_gradient(net, adv, loss, source, rng)?;
            let mut probe_rng = rng.child(0xD0 ^ it);
            it += 1;
            let trace = net.forward(adv, attack_eval_mode(net), &mut probe_rng, Some(loss))?;
            Ok((trace.loss.unwrap_or(f64::NAN), grad))
        },
        gamma,
        iters,
        lr,
    )
}

fn pow_usize(beta: f64, t: usize) -> f64 {
    beta.powi(t as i32)
}

fn attack_eval_mode(net: &Network) -> SimMode {
    if net.layers.iter().all(|l| l.noise.is_deterministic()) {
        SimMode::Deterministic
    } else {
        SimMode::Sample
    }
}

fn add(x: &[Vec<f64>], delta: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .zip(delta)
        .map(|(xs, ds)| xs.iter().zip(ds).map(|(a, b)| a + b).collect())
        .collect()
}

/// Drop every event (1-entry) independently with probability `rho`.
pub fn event_drop(
    input_seq: &[Vec<f64>],
    rho: f64,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Parameter(format!("rho must lie in [0,1], got {rho}")));
    }
    Ok(input_seq
        .iter()
        .map(|step| {
            step.iter()
                .map(|&v| {
                    if v != 0.0 && rng.sample_uniform() < rho {
                        0.0
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect())
}

/// Flip each spike state independently with probability `beta`, consuming one
/// uniform per state in order.
pub fn spike_flip_with_draws(spikes: &[u8], beta: f64, draws: &[f64]) -> Result<Vec<u8>> {
    if draws.len() != spikes.len() {
        return Err(Error::Shape("one draw per spike state required".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Parameter(format!("beta must lie in [0,1], got {beta}")));
    }
    Ok(spikes
        .iter()
        .zip(draws)
        .map(|(&s, &u)| if u < beta { 1 - s } else { s })
        .collect())
}

pub fn spike_flip(spikes: &[u8], beta: f64, rng: &mut RngStream) -> Result<Vec<u8>> {
    let draws: Vec<f64> = (0..spikes.len()).map(|_| rng.sample_uniform()).collect();
    spike_flip_with_draws(spikes, beta, &draws)
}

/// Forward pass with every hidden spike state flipped with probability `beta`
/// immediately after sampling, so all downstream consumers (reset included)
/// see the perturbed states.
pub fn forward_with_spike_flip(
    net: &Network,
    input_seq: &[Vec<f64>],
    mode: SimMode,
    beta: f64,
    rng: &mut RngStream,
    loss: Option<&Loss>,
) -> Result<Trace> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Parameter(format!("beta must lie in [0,1], got {beta}")));
    }
    net.forward_internal(input_seq, mode, rng, loss, Some(beta))
}
