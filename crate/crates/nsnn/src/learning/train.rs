//! Minibatch training loop.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::network::{Loss, Network, Trace};
use crate::neuron::SimMode;
use crate::numerics::RngStream;
use crate::{Error, Result};

use super::backward::{ndl_backward, sgl_backward, Surrogate};
use super::optimizer::{OptMethod, OptimizerState};
use super::GradientSet;

/// Which backward rule drives training. NDL runs stochastic forwards and uses
/// the noise density; SGL runs deterministic forwards with the ERF surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Ndl,
    Sgl,
}

impl Rule {
    pub fn forward_mode(&self) -> SimMode {
        match self {
            Rule::Ndl => SimMode::Sample,
            Rule::Sgl => SimMode::Deterministic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub method: OptMethod,
    pub lr: f64,
    pub rule: Rule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            method: OptMethod::Adam,
            lr: 3e-3,
            rule: Rule::Ndl,
        }
    }
}

/// One metrics row, mirrored verbatim into the metrics CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

pub type Sample = (Vec<Vec<f64>>, usize);

fn deterministic_shuffle(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}

fn sample_gradient(
    net: &Network,
    sample: &Sample,
    rule: Rule,
    rng: &mut RngStream,
) -> Result<(GradientSet, f64)> {
    let loss = Loss::CrossEntropy { target: sample.1 };
    let trace: Trace = net.forward(&sample.0, rule.forward_mode(), rng, None)?;
    let value = crate::network::trace_loss(net, &trace.logits, &loss)?;
    let grads = match rule {
        Rule::Ndl => ndl_backward(net, &trace, &loss)?,
        Rule::Sgl => sgl_backward(net, &trace, &loss, Surrogate::Erf)?,
    };
    Ok((grads, value))
}

/// Mean loss and accuracy over a dataset. Stochastic networks are evaluated
/// with one sampled trial per item on a deterministic substream.
pub fn evaluate(
    net: &Network,
    data: &[Sample],
    mode: SimMode,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let results: Vec<Result<(f64, bool)>> = data
        .par_iter()
        .enumerate()
        .map(|(i, (input, label))| {
            let mut item_rng = rng.child(i as u64);
            let trace = net.forward(input, mode, &mut item_rng, None)?;
            let loss = crate::network::trace_loss(
                net,
                &trace.logits,
                &Loss::CrossEntropy { target: *label },
            )?;
            Ok((loss, trace.predicted_class() == *label))
        })
        .collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for r in results {
        let (l, ok) = r?;
        loss_sum += l;
        correct += ok as usize;
    }
    Ok((loss_sum / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Minibatch gradient descent with the chosen backward rule and a
/// cosine-annealed learning rate. Returns per-epoch train/test metrics.
pub fn train(
    net: &mut Network,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<EpochRow>> {
    if train_set.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if cfg.rule == Rule::Ndl && net.layers.iter().any(|l| l.noise.is_deterministic()) {
        return Err(Error::Parameter(
            "NDL training needs a stochastic noise family on every layer".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch_size must be >= 1".into()));
    }
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut opt = OptimizerState::new(cfg.method, cfg.lr, total_steps, net.param_count());
    let mut rows = Vec::with_capacity(cfg.epochs * 2);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut shuffle_rng = rng.child(0xE50C ^ epoch as u64);
        let order = deterministic_shuffle(train_set.len(), &mut shuffle_rng);
        let lr_at_epoch_start = opt.current_lr();
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let per_sample: Vec<Result<(GradientSet, f64)>> = chunk
                .par_iter()
                .map(|&i| {
                    let tag = (epoch as u64) << 40 | (batch_idx as u64) << 20 | i as u64;
                    let mut sample_rng = rng.child(tag);
                    sample_gradient(net, &train_set[i], cfg.rule, &mut sample_rng)
                })
                .collect();
            let mut batch_grads = GradientSet::zeros_like(net);
            let mut batch_loss = 0.0;
            for r in per_sample {
                let (g, l) = r?;
                batch_grads.add_scaled(&g, 1.0 / chunk.len() as f64);
                batch_loss += l / chunk.len() as f64;
            }
            if !batch_loss.is_finite() || !batch_grads.all_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let mut params = net.params_flat();
            opt.apply(&mut params, &batch_grads.flat())?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            net.set_params_flat(&params)?;
        }
        let wall_ms = started.elapsed().as_millis() as u64;
        let eval_rng = rng.child(0xEAA1 ^ (epoch as u64) << 8);
        let (train_loss, train_acc) =
            evaluate(net, train_set, cfg.rule.forward_mode(), &eval_rng)?;
        let eval_rng = rng.child(0xEAA2 ^ (epoch as u64) << 8);
        let (test_loss, test_acc) = evaluate(net, test_set, cfg.rule.forward_mode(), &eval_rng)?;
        if !train_loss.is_finite() || !test_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        rows.push(EpochRow {
            epoch,
            split: Split::Train,
            loss: train_loss,
            accuracy: train_acc,
            lr: lr_at_epoch_start,
            wall_ms,
        });
        rows.push(EpochRow {
            epoch,
            split: Split::Test,
            loss: test_loss,
            accuracy: test_acc,
            lr: lr_at_epoch_start,
            wall_ms,
        });
    }
    Ok(rows)
}
