//! Reverse-mode sweep over the unrolled (layer, time) graph.
//!
//! The sweep is the standard BPTT recursion for the membrane dynamics with
//! one substitution: wherever the exact chain rule needs the derivative of a
//! spike w.r.t. its membrane, a smooth factor is used instead — the membrane
//! noise density for NDL, or a fixed surrogate for SGL. Temporal credit flows
//! through `tau * u^{t-1}` gated by `(1 - o)`; the reset path itself carries
//! no gradient (the spike is treated as a constant there), which keeps the
//! recursion well-defined but does alter temporal gradients around resets.

use crate::analysis;
use crate::network::{Loss, LossMode, Network, Trace};
use crate::numerics::Matrix;
use crate::{Error, Result};

use super::GradientSet;

/// `SG_ERF(0) = 1/sqrt(pi)`.
pub const SG_ERF_AT_ZERO: f64 = 0.5641895835477563;

/// Surrogate pseudo-derivative families for SGL.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surrogate {
    /// `SG_ERF(x) = (1/sqrt(pi)) exp(-x^2)`.
    Erf,
}

impl Surrogate {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Surrogate::Erf => SG_ERF_AT_ZERO * (-x * x).exp(),
        }
    }
}

/// Which factor replaces the firing derivative in the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PseudoDeriv {
    /// Noise-driven learning: the layer's own noise density at `u - v_th`.
    NoisePdf,
    /// Surrogate-gradient learning with a fixed pseudo-derivative.
    Fixed(Surrogate),
}

/// Training objective: either a scalar loss through the readout head, or a
/// target spike train matched with the PSP-kernel discrepancy loss (in which
/// case the readout is unused and receives zero gradient).
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Head(Loss),
    SpikeTrain {
        /// Target spikes, neurons x T.
        target: Matrix,
        psp_tau: f64,
    },
}

/// Result of one backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    pub grads: GradientSet,
    /// Gradient of the objective w.r.t. the external input, per timestep.
    pub input_grads: Vec<Vec<f64>>,
}

fn check_trace(net: &Network, trace: &Trace) -> Result<()> {
    if trace.n_layers() != net.layers.len() {
        return Err(Error::Shape(format!(
            "trace has {} layers, network has {}",
            trace.n_layers(),
            net.layers.len()
        )));
    }
    for step in &trace.steps {
        for (rec, layer) in step.iter().zip(&net.layers) {
            if rec.u_pre.len() != layer.out_dim() || rec.input.len() != layer.in_dim() {
                return Err(Error::Shape("trace/network layer shape mismatch".into()));
            }
        }
    }
    Ok(())
}

/// Per-timestep gradient of the objective w.r.t. the final-layer spikes,
/// together with the readout parameter gradients.
fn terminal_signal(
    net: &Network,
    trace: &Trace,
    objective: &Objective,
) -> Result<(Vec<Vec<f64>>, GradientSet)> {
    let t_steps = trace.t_steps();
    let mut grads = GradientSet::zeros_like(net);
    let mut delta_o_last = vec![Vec::new(); t_steps];
    match objective {
        Objective::Head(loss) => {
            let glogits: Vec<Vec<f64>> = match net.loss_mode {
                LossMode::PerStepMean => {
                    let mut per_t = Vec::with_capacity(t_steps);
                    for z in &trace.logits {
                        let mut g = loss.grad(z)?;
                        for gi in &mut g {
                            *gi /= t_steps as f64;
                        }
                        per_t.push(g);
                    }
                    per_t
                }
                LossMode::MeanLogits => {
                    let mut g = loss.grad(&trace.mean_logits())?;
                    for gi in &mut g {
                        *gi /= t_steps as f64;
                    }
                    vec![g; t_steps]
                }
            };
            let last = trace.n_layers() - 1;
            for (t, g) in glogits.iter().enumerate() {
                let spikes: Vec<f64> = trace.steps[t][last]
                    .spikes
                    .iter()
                    .map(|&s| s as f64)
                    .collect();
                grads.readout.weights.add_outer(g, &spikes, 1.0)?;
                for (b, gi) in grads.readout.bias.iter_mut().zip(g) {
                    *b += gi;
                }
                delta_o_last[t] = net.readout.weights.tr_matvec(g)?;
            }
        }
        Objective::SpikeTrain { target, psp_tau } => {
            let predicted = trace.final_layer_spikes();
            let g = analysis::psp_mmd_grad(&predicted, target, *psp_tau)?;
            for (t, slot) in delta_o_last.iter_mut().enumerate() {
                *slot = (0..g.rows()).map(|n| g.get(n, t)).collect();
            }
        }
    }
    Ok((delta_o_last, grads))
}

/// Shared reverse sweep. Returns parameter gradients and input gradients.
pub fn backward(
    net: &Network,
    trace: &Trace,
    objective: &Objective,
    factor: PseudoDeriv,
) -> Result<BackwardPass> {
    check_trace(net, trace)?;
    let t_steps = trace.t_steps();
    let (delta_o_last, mut grads) = terminal_signal(net, trace, objective)?;

    // delta w.r.t. each layer's spike outputs, per timestep; starts at the top.
    let mut delta_o = delta_o_last;
    let mut input_grads = vec![Vec::new(); t_steps];
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let n = layer.out_dim();
        // delta w.r.t. the pre-reset membrane, filled backwards in time
        let mut delta_u = vec![vec![0.0; n]; t_steps];
        for t in (0..t_steps).rev() {
            let rec = &trace.steps[t][l];
            for m in 0..n {
                let phi = match factor {
                    PseudoDeriv::NoisePdf => layer.noise.pdf(rec.u_pre[m] - layer.lif.v_th)?,
                    PseudoDeriv::Fixed(s) => s.eval(rec.u_pre[m] - layer.lif.v_th),
                };
                let mut d = delta_o[t][m] * phi;
                if t + 1 < t_steps {
                    let survived = 1.0 - rec.spikes[m] as f64;
                    d += layer.lif.tau * survived * delta_u[t + 1][m];
                }
                delta_u[t][m] = d;
            }
            grads.layers[l]
                .weights
                .add_outer(&delta_u[t], &rec.input, 1.0)?;
            for (b, d) in grads.layers[l].bias.iter_mut().zip(&delta_u[t]) {
                *b += d;
            }
        }
        // propagate to the spikes of the layer below (or the external input)
        for t in 0..t_steps {
            let upstream = layer.weights.tr_matvec(&delta_u[t])?;
            let scaled: Vec<f64> = upstream.iter().map(|v| v * layer.input_scale).collect();
            if l == 0 {
                input_grads[t] = scaled;
            } else {
                delta_o[t] = scaled;
            }
        }
    }
    Ok(BackwardPass { grads, input_grads })
}

/// Noise-driven learning backward pass: the post-synaptic factor is the
/// membrane noise density evaluated at `u - v_th`.
pub fn ndl_backward(net: &Network, trace: &Trace, loss: &Loss) -> Result<GradientSet> {
    Ok(backward(net, trace, &Objective::Head(loss.clone()), PseudoDeriv::NoisePdf)?.grads)
}

/// Surrogate-gradient backward pass for the deterministic baseline.
pub fn sgl_backward(
    net: &Network,
    trace: &Trace,
    loss: &Loss,
    surrogate: Surrogate,
) -> Result<GradientSet> {
    Ok(backward(
        net,
        trace,
        &Objective::Head(loss.clone()),
        PseudoDeriv::Fixed(surrogate),
    )?
    .grads)
}
