//! Neural coding metrics and the PSP-kernel spike-train loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::network::Network;
use crate::neuron::SimMode;
use crate::numerics::{Matrix, RngStream};
use crate::{Error, Result};

/// Spike counts across repeated trials of one stimulus, trials x neurons,
/// with the per-trial prediction vectors alongside.
#[derive(Debug, Clone)]
pub struct TrialEnsemble {
    pub counts: Matrix,
    pub predictions: Vec<Vec<f64>>,
}

/// Fano factor per neuron: unbiased sample variance of the spike counts over
/// trials divided by the mean count. Neurons with zero mean count have no
/// defined Fano factor and report `None`.
pub fn fano_factor(counts: &Matrix) -> Result<Vec<Option<f64>>> {
    let trials = counts.rows();
    let neurons = counts.cols();
    if trials < 2 {
        return Err(Error::InsufficientData(
            "fano factor needs at least 2 trials".into(),
        ));
    }
    let mut out = Vec::with_capacity(neurons);
    for m in 0..neurons {
        let mut mean = 0.0;
        for k in 0..trials {
            mean += counts.get(k, m);
        }
        mean /= trials as f64;
        if mean == 0.0 {
            out.push(None);
            continue;
        }
        let mut ss = 0.0;
        for k in 0..trials {
            let d = counts.get(k, m) - mean;
            ss += d * d;
        }
        let var = ss / (trials as f64 - 1.0);
        out.push(Some(var / mean));
    }
    Ok(out)
}

/// Cosine similarity of two prediction vectors.
pub fn prediction_similarity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape("vectors must share a length".into()));
    }
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np == 0.0 || nq == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok(p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (np * nq))
}

/// Pearson correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InsufficientData(
            "pearson needs equal lengths >= 3".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Degenerate("zero variance in pearson input".into()));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// First-order postsynaptic potential filter:
/// `PSP_t = (1 - 1/tau_s) PSP_{t-1} + (1/tau_s) y_t`, with `PSP_0 = 0`.
pub fn psp_filter(train: &[f64], tau_s: f64) -> Result<Vec<f64>> {
    if tau_s.is_nan() || tau_s <= 1.0 {
        return Err(Error::Parameter(format!("tau_s must be > 1, got {tau_s}")));
    }
    let keep = 1.0 - 1.0 / tau_s;
    let gain = 1.0 / tau_s;
    let mut out = Vec::with_capacity(train.len());
    let mut acc = 0.0;
    for &y in train {
        acc = keep * acc + gain * y;
        out.push(acc);
    }
    Ok(out)
}

/// Predicted/recorded spike trains to be compared under the PSP kernel.
#[derive(Debug, Clone)]
pub struct SpikeTrainPair {
    pub predicted: Matrix,
    pub recorded: Matrix,
    pub psp_tau: f64,
}

impl SpikeTrainPair {
    pub fn new(predicted: Matrix, recorded: Matrix) -> Result<Self> {
        let pair = SpikeTrainPair {
            predicted,
            recorded,
            psp_tau: 2.0,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.predicted.rows() != self.recorded.rows()
            || self.predicted.cols() != self.recorded.cols()
        {
            return Err(Error::Shape("spike train shapes differ".into()));
        }
        if self.psp_tau.is_nan() || self.psp_tau <= 1.0 {
            return Err(Error::Parameter("psp_tau must be > 1".into()));
        }
        Ok(())
    }

    pub fn loss(&self) -> Result<f64> {
        self.validate()?;
        psp_mmd_loss(&self.predicted, &self.recorded, self.psp_tau)
    }
}

/// PSP-kernel discrepancy: `(1/T) sum_t sum_{tau<=t} ||PSP(pred)_tau - PSP(rec)_tau||^2`
/// over neurons x T spike matrices.
pub fn psp_mmd_loss(predicted: &Matrix, recorded: &Matrix, tau_s: f64) -> Result<f64> {
    if predicted.rows() != recorded.rows() || predicted.cols() != recorded.cols() {
        return Err(Error::Shape("spike train shapes differ".into()));
    }
    let t_steps = predicted.cols();
    if t_steps == 0 {
        return Ok(0.0);
    }
    // sum_t sum_{tau<=t} ||d_tau||^2 = sum_tau (T - tau + 1) ||d_tau||^2
    let mut acc = 0.0;
    for n in 0..predicted.rows() {
        let p = psp_filter(predicted.row(n), tau_s)?;
        let r = psp_filter(recorded.row(n), tau_s)?;
        for (tau, (a, b)) in p.iter().zip(&r).enumerate() {
            let weight = (t_steps - tau) as f64;
            let d = a - b;
            acc += weight * d * d;
        }
    }
    Ok(acc / t_steps as f64)
}

/// Gradient of `psp_mmd_loss` w.r.t. the predicted spike entries.
pub fn psp_mmd_grad(predicted: &Matrix, recorded: &Matrix, tau_s: f64) -> Result<Matrix> {
    if predicted.rows() != recorded.rows() || predicted.cols() != recorded.cols() {
        return Err(Error::Shape("spike train shapes differ".into()));
    }
    let t_steps = predicted.cols();
    let keep = 1.0 - 1.0 / tau_s;
    let gain = 1.0 / tau_s;
    let mut grad = Matrix::zeros(predicted.rows(), t_steps);
    for n in 0..predicted.rows() {
        let p = psp_filter(predicted.row(n), tau_s)?;
        let r = psp_filter(recorded.row(n), tau_s)?;
        // dPSP_tau / dy_k = gain * keep^{tau-k} for tau >= k
        for k in 0..t_steps {
            let mut g = 0.0;
            let mut kernel = gain;
            for tau in k..t_steps {
                let weight = (t_steps - tau) as f64;
                g += 2.0 * weight * (p[tau] - r[tau]) * kernel;
                kernel *= keep;
            }
            grad.set(n, k, g / t_steps as f64);
        }
    }
    Ok(grad)
}

/// Outcome of the coding analysis over a set of stimuli.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodingReport {
    /// Per stimulus: mean Fano factor over defined neurons, mean pairwise
    /// prediction cosine similarity.
    pub per_sample: Vec<(f64, f64)>,
    /// Pearson correlation between the two columns; `None` when degenerate
    /// (for example a deterministic network).
    pub pearson: Option<f64>,
    /// Percentile bootstrap 95% interval for the correlation.
    pub bootstrap_ci: Option<(f64, f64)>,
    pub n_trials: usize,
    /// Prediction vectors are post-softmax probabilities.
    pub prediction_space: String,
}

/// Repeat stochastic forwards per stimulus and correlate spike-count
/// variability (mean Fano factor of the final spiking layer) with prediction
/// stability (mean pairwise cosine of post-softmax predictions).
pub fn coding_report(
    net: &Network,
    inputs: &[Vec<Vec<f64>>],
    n_trials: usize,
    rng: &RngStream,
    n_bootstrap: usize,
) -> Result<CodingReport> {
    if n_trials < 2 {
        return Err(Error::InsufficientData(
            "coding analysis needs at least 2 trials".into(),
        ));
    }
    if inputs.is_empty() {
        return Err(Error::InsufficientData("no stimuli provided".into()));
    }
    let per_sample: Vec<Result<(f64, f64)>> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| {
            let ensemble = trial_ensemble(net, input, n_trials, &rng.child(i as u64))?;
            let fanos = fano_factor(&ensemble.counts)?;
            let defined: Vec<f64> = fanos.into_iter().flatten().collect();
            let mean_fano = if defined.is_empty() {
                0.0
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            };
            let mut cos_sum = 0.0;
            let mut pairs = 0usize;
            for a in 0..n_trials {
                for b in (a + 1)..n_trials {
                    cos_sum +=
                        prediction_similarity(&ensemble.predictions[a], &ensemble.predictions[b])?;
                    pairs += 1;
                }
            }
            Ok((mean_fano, cos_sum / pairs as f64))
        })
        .collect();
    let per_sample: Result<Vec<(f64, f64)>> = per_sample.into_iter().collect();
    let per_sample = per_sample?;
    let fano: Vec<f64> = per_sample.iter().map(|(f, _)| *f).collect();
    let cos: Vec<f64> = per_sample.iter().map(|(_, c)| *c).collect();
    let pearson = pearson_r(&fano, &cos).ok();
    let bootstrap_ci = pearson
        .map(|_| bootstrap_pearson_ci(&fano, &cos, n_bootstrap, &mut rng.child(0xB007)))
        .transpose()?;
    Ok(CodingReport {
        per_sample,
        pearson,
        bootstrap_ci,
        n_trials,
        prediction_space: "post_softmax".into(),
    })
}

/// Spike counts and post-softmax predictions across repeated trials.
pub fn trial_ensemble(
    net: &Network,
    input: &[Vec<f64>],
    n_trials: usize,
    rng: &RngStream,
) -> Result<TrialEnsemble> {
    let last_dim = net.layers.last().unwrap().out_dim();
    let mut counts = Matrix::zeros(n_trials, last_dim);
    let mut predictions = Vec::with_capacity(n_trials);
    for k in 0..n_trials {
        let mut trial_rng = rng.child(k as u64);
        let trace = net.forward(input, SimMode::Sample, &mut trial_rng, None)?;
        for (m, c) in trace.final_layer_counts().into_iter().enumerate() {
            counts.set(k, m, c as f64);
        }
        predictions.push(softmax(&trace.mean_logits()));
    }
    Ok(TrialEnsemble {
        counts,
        predictions,
    })
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let denom: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / denom).collect()
}

/// Percentile bootstrap interval for the Pearson correlation of paired data.
pub fn bootstrap_pearson_ci(
    x: &[f64],
    y: &[f64],
    n_boot: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if n_boot < 10 {
        return Err(Error::Parameter("bootstrap needs >= 10 resamples".into()));
    }
    let n = x.len();
    let mut rs = Vec::with_capacity(n_boot);
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    for _ in 0..n_boot {
        for k in 0..n {
            let j = (rng.next_u64() % n as u64) as usize;
            bx[k] = x[j];
            by[k] = y[j];
        }
        if let Ok(r) = pearson_r(&bx, &by) {
            rs.push(r);
        }
    }
    if rs.len() < n_boot / 2 {
        return Err(Error::Degenerate(
            "too many degenerate bootstrap resamples".into(),
        ));
    }
    rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = rs[(rs.len() as f64 * 0.025) as usize];
    let hi = rs[((rs.len() as f64 * 0.975) as usize).min(rs.len() - 1)];
    Ok((lo, hi))
}
