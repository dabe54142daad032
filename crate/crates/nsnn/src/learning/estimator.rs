//! Gradient estimators and oracles.
//!
//! `local_marg_gradient` is the unbiased estimator that sums, over every
//! spiking neuron-step, the exact loss difference caused by flipping that
//! single spike (downstream re-simulated under common random numbers) times
//! the gradient of its Bernoulli factor. `exact_gradient` is an independent
//! oracle: central finite differences of the enumerated expected loss.

use crate::network::{expected_loss, trace_loss, Loss, Network, Trace};
use crate::neuron::SimMode;
use crate::numerics::RngStream;
use crate::{Error, Result};

use super::backward::{ndl_backward, sgl_backward, Surrogate};
use super::{train::Rule, GradientSet};

/// Per-neuron-step flips re-evaluate the whole downstream trajectory, so the
/// estimator is restricted to networks the enumeration oracle could also walk.
const FLIP_GUARD: usize = 512;

/// Replay the sampled trajectory under its recorded uniforms with one spike
/// variable forced to `forced_value`, and return the loss. The prefix before
/// the forced variable reproduces the original trajectory exactly; everything
/// downstream reacts to the flip through the shared draws.
fn replay_with_flip(
    net: &Network,
    input_seq: &[Vec<f64>],
    trace: &Trace,
    flip: (usize, usize, usize),
    forced_value: u8,
    loss: &Loss,
) -> Result<f64> {
    let (ft, fl, fm) = flip;
    let mut membranes: Vec<Vec<f64>> = net
        .layers
        .iter()
        .map(|l| vec![l.lif.u_reset; l.out_dim()])
        .collect();
    let mut logits = Vec::with_capacity(input_seq.len());
    for (t, x_t) in input_seq.iter().enumerate() {
        let mut layer_input = x_t.clone();
        for (l, layer) in net.layers.iter().enumerate() {
            let scaled: Vec<f64> = layer_input.iter().map(|v| v * layer.input_scale).collect();
            let mut drive = layer.weights.matvec(&scaled)?;
            for (d, b) in drive.iter_mut().zip(&layer.bias) {
                *d += b;
            }
            let draws = &trace.steps[t][l].draws;
            let mut spikes = vec![0.0; layer.out_dim()];
            for m in 0..layer.out_dim() {
                let u = layer.lif.tau * membranes[l][m] + drive[m];
                let fired = if t == ft && l == fl && m == fm {
                    forced_value == 1
                } else {
                    let p = layer.noise.cdf(u - layer.lif.v_th)?;
                    draws[m] < p
                };
                spikes[m] = fired as u8 as f64;
                membranes[l][m] = if fired { layer.lif.u_reset } else { u };
            }
            layer_input = spikes;
        }
        logits.push(net.readout.logits(&layer_input)?);
    }
    trace_loss(net, &logits, loss)
}

/// One-sample local-marginalization estimate from an instrumented trace.
fn local_marg_single(
    net: &Network,
    input_seq: &[Vec<f64>],
    trace: &Trace,
    loss: &Loss,
) -> Result<GradientSet> {
    let t_steps = trace.t_steps();
    let mut grads = GradientSet::zeros_like(net);

    // The readout gradient is pathwise-exact given the sampled spikes; only
    // the spiking layers need the flip machinery.
    let head = super::backward::backward(
        net,
        trace,
        &super::backward::Objective::Head(loss.clone()),
        super::backward::PseudoDeriv::Fixed(Surrogate::Erf),
    )?;
    grads.readout = head.grads.readout;

    let base_loss = trace_loss(net, &trace.logits, loss)?;
    for (l, layer) in net.layers.iter().enumerate() {
        let n = layer.out_dim();
        // Eligibility of u^t w.r.t. row m of the weights (and the bias):
        // e^t = x^t + tau * (1 - o^{t-1}) e^{t-1}.
        let mut elig_w: Vec<Vec<f64>> = vec![vec![0.0; layer.in_dim()]; n];
        let mut elig_b = vec![0.0; n];
        for t in 0..t_steps {
            let rec = &trace.steps[t][l];
            for m in 0..n {
                let carry = if t == 0 {
                    0.0
                } else {
                    let prev_spike = trace.steps[t - 1][l].spikes[m] as f64;
                    layer.lif.tau * (1.0 - prev_spike)
                };
                for (e, &x) in elig_w[m].iter_mut().zip(&rec.input) {
                    *e = x + carry * *e;
                }
                elig_b[m] = 1.0 + carry * elig_b[m];
                let o = rec.spikes[m];
                let pdf = layer.noise.pdf(rec.u_pre[m] - layer.lif.v_th)?;
                if pdf == 0.0 {
                    continue;
                }
                let flipped = replay_with_flip(net, input_seq, trace, (t, l, m), 1 - o, loss)?;
                let delta_l = base_loss - flipped;
                if delta_l == 0.0 {
                    continue;
                }
                let sign = 2.0 * o as f64 - 1.0;
                let coeff = sign * pdf * delta_l;
                for (g, &e) in grads.layers[l].weights.data_mut()
                    [m * layer.in_dim()..(m + 1) * layer.in_dim()]
                    .iter_mut()
                    .zip(&elig_w[m])
                {
                    *g += coeff * e;
                }
                grads.layers[l].bias[m] += coeff * elig_b[m];
            }
        }
    }
    Ok(grads)
}

fn check_flip_guard(net: &Network, t_steps: usize) -> Result<()> {
    let n_vars = net.spike_var_count(t_steps);
    if n_vars > FLIP_GUARD {
        return Err(Error::Capacity(format!(
            "{n_vars} neuron-steps exceed the per-sample flip guard of {FLIP_GUARD}"
        )));
    }
    Ok(())
}

/// Running mean and standard error of flattened gradient samples.
#[derive(Debug, Clone)]
pub struct GradStats {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl GradStats {
    pub fn new(dim: usize) -> Self {
        GradStats {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, sample: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn stderr(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| (s / (n - 1.0).max(1.0) / n).sqrt())
            .collect()
    }

    /// Largest componentwise |mean - reference| / stderr; the z-score a
    /// 3-standard-error acceptance gate looks at. Components whose standard
    /// error underflows count only if the bias itself is non-negligible.
    pub fn max_bias_over_se(&self, reference: &[f64]) -> f64 {
        let se = self.stderr();
        self.mean
            .iter()
            .zip(reference)
            .zip(&se)
            .map(|((m, r), s)| {
                let bias = (m - r).abs();
                if *s > 0.0 {
                    bias / s
                } else if bias < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    /// As `max_bias_over_se`, but with the standard error floored. The floor
    /// absorbs the truncation error of the finite-difference oracle on
    /// coordinates where the estimator has zero variance.
    pub fn max_bias_over_se_floored(&self, reference: &[f64], se_floor: f64) -> f64 {
        let se = self.stderr();
        self.mean
            .iter()
            .zip(reference)
            .zip(&se)
            .map(|((m, r), s)| (m - r).abs() / s.max(se_floor))
            .fold(0.0, f64::max)
    }
}

/// Mean of `n_samples` local-marginalization estimates.
pub fn local_marg_gradient(
    net: &Network,
    input_seq: &[Vec<f64>],
    loss: &Loss,
    rng: &mut RngStream,
    n_samples: usize,
) -> Result<GradientSet> {
    Ok(local_marg_statistics(net, input_seq, loss, rng, n_samples)?.1)
}

/// Mean plus running statistics of the local-marginalization estimator.
pub fn local_marg_statistics(
    net: &Network,
    input_seq: &[Vec<f64>],
    loss: &Loss,
    rng: &mut RngStream,
    n_samples: usize,
) -> Result<(GradStats, GradientSet)> {
    if n_samples == 0 {
        return Err(Error::Parameter("n_samples must be >= 1".into()));
    }
    check_flip_guard(net, input_seq.len())?;
    let mut stats = GradStats::new(net.param_count());
    for k in 0..n_samples {
        let mut sample_rng = rng.child(k as u64);
        let trace = net.forward(input_seq, SimMode::Sample, &mut sample_rng, None)?;
        let grads = local_marg_single(net, input_seq, &trace, loss)?;
        stats.push(&grads.flat());
    }
    let mean = GradientSet::from_flat(net, stats.mean())?;
    Ok((stats, mean))
}

/// Statistics of a sampled backward rule (fresh stochastic forward per draw).
pub fn sampled_backward_statistics(
    net: &Network,
    input_seq: &[Vec<f64>],
    loss: &Loss,
    rule: Rule,
    rng: &mut RngStream,
    n_samples: usize,
) -> Result<GradStats> {
    if n_samples == 0 {
        return Err(Error::Parameter("n_samples must be >= 1".into()));
    }
    let mut stats = GradStats::new(net.param_count());
    for k in 0..n_samples {
        let mut sample_rng = rng.child(k as u64);
        let trace = net.forward(input_seq, SimMode::Sample, &mut sample_rng, None)?;
        let grads = match rule {
            Rule::Ndl => ndl_backward(net, &trace, loss)?,
            Rule::Sgl => sgl_backward(net, &trace, loss, Surrogate::Erf)?,
        };
        stats.push(&grads.flat());
    }
    Ok(stats)
}

/// Exact gradient oracle: central finite differences (`h = 1e-5`) of the
/// enumerated expected loss with respect to every parameter. Deliberately
/// independent of the backward-pass code paths it is used to check.
pub fn exact_gradient(net: &Network, input_seq: &[Vec<f64>], loss: &Loss) -> Result<GradientSet> {
    exact_gradient_with_step(net, input_seq, loss, 1e-5)
}

pub(crate) fn exact_gradient_with_step(
    net: &Network,
    input_seq: &[Vec<f64>],
    loss: &Loss,
    h: f64,
) -> Result<GradientSet> {
    let base = net.params_flat();
    let mut grad = vec![0.0; base.len()];
    let mut work = net.clone();
    for k in 0..base.len() {
        let mut up = base.clone();
        up[k] += h;
        work.set_params_flat(&up)?;
        let loss_up = expected_loss(&work, input_seq, loss)?;
        let mut down = base.clone();
        down[k] -= h;
        work.set_params_flat(&down)?;
        let loss_down = expected_loss(&work, input_seq, loss)?;
        grad[k] = (loss_up - loss_down) / (2.0 * h);
    }
    GradientSet::from_flat(net, &grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fixtures;
    use crate::network::{LayerSpec, LossMode, ReadoutSpec};
    use crate::neuron::{LifParams, NoiseModel};
    use crate::numerics::Matrix;

    fn one_neuron_net(weight: f64, sigma: f64) -> Network {
        Network::new(
            vec![LayerSpec::new(
                Matrix::from_rows(&[vec![weight]]).unwrap(),
                vec![0.0],
                LifParams::default(),
                NoiseModel::gaussian(sigma).unwrap(),
            )
            .unwrap()],
            ReadoutSpec {
                weights: Matrix::from_rows(&[vec![1.0]]).unwrap(),
                bias: vec![0.0],
            },
            LossMode::PerStepMean,
        )
        .unwrap()
    }

    #[test]
    fn loss_independent_of_spikes_gives_zero_gradient() {
        let net = one_neuron_net(0.9, 0.3);
        let mut rng = RngStream::new(4, 2);
        let grads = local_marg_gradient(
            &net,
            &[vec![1.0]],
            &Loss::Linear { weights: vec![0.0] },
            &mut rng,
            64,
        )
        .unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    // One neuron, T=1, loss(o) = o: every sample of the estimator equals
    // pdf(u - v_th) * x because the +/-1 flip difference cancels the sign.
    #[test]
    fn one_neuron_estimator_is_exact_per_sample() {
        let weight = 0.8;
        let x = 1.25;
        let sigma = 0.3;
        let net = one_neuron_net(weight, sigma);
        let noise = NoiseModel::gaussian(sigma).unwrap();
        let expected = noise.pdf(weight * x - 1.0).unwrap() * x;
        let mut rng = RngStream::new(11, 3);
        let (stats, mean) =
            local_marg_statistics(&net, &[vec![x]], &Loss::Linear { weights: vec![1.0] }, &mut rng, 32)
                .unwrap();
        assert!((mean.layers[0].weights.get(0, 0) - expected).abs() < 1e-12);
        // zero variance: every sample is identical
        assert!(stats.stderr()[0] < 1e-14);
    }

    #[test]
    fn exact_gradient_zero_for_constant_loss() {
        let net = fixtures::grad_check_net();
        let input = fixtures::grad_check_input(2);
        let grads =
            exact_gradient(&net, &input, &Loss::Linear { weights: vec![0.0, 0.0] }).unwrap();
        assert!(grads.max_abs() < 1e-10);
    }

    #[test]
    fn exact_gradient_matches_hand_chain_rule() {
        // Single neuron, affine loss: d E[c*o] / dw = c * pdf(u - v_th) * x.
        let weight = 0.8;
        let x = 1.25;
        let sigma = 0.3;
        let c = 2.0;
        let net = one_neuron_net(weight, sigma);
        let grads =
            exact_gradient(&net, &[vec![x]], &Loss::Linear { weights: vec![c] }).unwrap();
        let noise = NoiseModel::gaussian(sigma).unwrap();
        let expected = c * noise.pdf(weight * x - 1.0).unwrap() * x;
        assert!((grads.layers[0].weights.get(0, 0) - expected).abs() < 1e-6);
    }

    #[test]
    fn exact_gradient_stable_under_step_choice() {
        let net = fixtures::grad_check_net();
        let input = fixtures::grad_check_input(2);
        let loss = Loss::CrossEntropy { target: 0 };
        let g5 = exact_gradient_with_step(&net, &input, &loss, 1e-5).unwrap();
        let g4 = exact_gradient_with_step(&net, &input, &loss, 1e-4).unwrap();
        for (a, b) in g5.flat().iter().zip(g4.flat()) {
            let scale = a.abs().max(b.abs()).max(1e-8);
            assert!((a - b).abs() / scale < 1e-5, "{a} vs {b}");
        }
    }

    // Single spiking layer, softmax loss: the local-marginalization mean
    // matches the enumeration oracle while plain NDL is measurably biased on
    // the same instance (first-order loss expansion of a nonlinear loss).
    #[test]
    fn local_marg_unbiased_where_ndl_is_biased() {
        let net = fixtures::grad_check_net();
        let input = fixtures::grad_check_input(1);
        let loss = Loss::CrossEntropy { target: 0 };
        let exact = exact_gradient(&net, &input, &loss).unwrap().flat();

        let n = 40_000;
        let mut rng = RngStream::new(31, 7);
        let (lm_stats, _) = local_marg_statistics(&net, &input, &loss, &mut rng, n).unwrap();
        assert!(
            lm_stats.max_bias_over_se(&exact) < 3.0,
            "local marginalization z = {}",
            lm_stats.max_bias_over_se(&exact)
        );

        let mut rng = RngStream::new(31, 8);
        let ndl_stats =
            sampled_backward_statistics(&net, &input, &loss, Rule::Ndl, &mut rng, n).unwrap();
        assert!(
            ndl_stats.max_bias_over_se(&exact) > 3.0,
            "ndl should show measurable first-order bias, z = {}",
            ndl_stats.max_bias_over_se(&exact)
        );
    }

    // T=2 with a loss affine in the spikes: the first-order expansion is
    // exact, so sampled NDL matches the enumeration oracle per coordinate.
    // The first-step input is zero so the blocked reset path carries no
    // temporal credit (u_pre = u_reset there), keeping the check pure.
    #[test]
    fn ndl_unbiased_on_multilinear_t2_fixture() {
        let net = Network::new(
            vec![LayerSpec::new(
                Matrix::from_rows(&[vec![0.8, 0.4], vec![0.3, 0.9]]).unwrap(),
                vec![0.0, 0.0],
                LifParams::default(),
                NoiseModel::gaussian(0.3).unwrap(),
            )
            .unwrap()],
            ReadoutSpec {
                weights: Matrix::from_rows(&[vec![1.2, -0.7], vec![-0.5, 1.0]]).unwrap(),
                bias: vec![0.05, -0.05],
            },
            LossMode::PerStepMean,
        )
        .unwrap();
        let input = vec![vec![0.0, 0.0], vec![1.0, 1.25]];
        let loss = Loss::Linear {
            weights: vec![0.7, -0.4],
        };
        let exact = exact_gradient(&net, &input, &loss).unwrap().flat();
        let mut rng = RngStream::new(77, 7);
        let stats =
            sampled_backward_statistics(&net, &input, &loss, Rule::Ndl, &mut rng, 100_000)
                .unwrap();
        let z = stats.max_bias_over_se_floored(&exact, 1e-8);
        assert!(z < 3.0, "max |bias|/SE = {z}");
    }

    // Two spiking layers: cross-layer flips exercise the downstream
    // re-simulation; the estimator stays unbiased.
    #[test]
    fn local_marg_unbiased_on_deep_network() {
        let net = Network::new(
            vec![
                LayerSpec::new(
                    Matrix::from_rows(&[vec![0.9], vec![0.5]]).unwrap(),
                    vec![0.1, 0.2],
                    LifParams::default(),
                    NoiseModel::gaussian(0.3).unwrap(),
                )
                .unwrap(),
                LayerSpec::new(
                    Matrix::from_rows(&[vec![0.8, 0.6]]).unwrap(),
                    vec![0.3],
                    LifParams::default(),
                    NoiseModel::gaussian(0.3).unwrap(),
                )
                .unwrap(),
            ],
            ReadoutSpec {
                weights: Matrix::from_rows(&[vec![1.4], vec![-0.9]]).unwrap(),
                bias: vec![0.0, 0.1],
            },
            LossMode::PerStepMean,
        )
        .unwrap();
        let input = vec![vec![1.0], vec![0.5]];
        let loss = Loss::CrossEntropy { target: 1 };
        let exact = exact_gradient(&net, &input, &loss).unwrap().flat();
        let mut rng = RngStream::new(12, 12);
        let (stats, _) = local_marg_statistics(&net, &input, &loss, &mut rng, 60_000).unwrap();
        assert!(
            stats.max_bias_over_se(&exact) < 3.0,
            "z = {}",
            stats.max_bias_over_se(&exact)
        );
    }

    #[test]
    fn flip_guard_trips_on_large_networks() {
        let net = Network::new(
            vec![LayerSpec::new(
                Matrix::zeros(20, 4),
                vec![0.0; 20],
                LifParams::default(),
                NoiseModel::gaussian(0.3).unwrap(),
            )
            .unwrap()],
            ReadoutSpec {
                weights: Matrix::zeros(2, 20),
                bias: vec![0.0; 2],
            },
            LossMode::PerStepMean,
        )
        .unwrap();
        let input = vec![vec![0.0; 4]; 30];
        let mut rng = RngStream::new(1, 1);
        assert!(matches!(
            local_marg_gradient(&net, &input, &Loss::CrossEntropy { target: 0 }, &mut rng, 1),
            Err(Error::Capacity(_))
        ));
    }
}
