//! Membrane noise models and the noisy leaky integrate-and-fire transition.
//!
//! A neuron integrates `u^t = tau * u^{t-1} + drive`, fires with probability
//! `F(u^t - v_th)` where `F` is the CDF of the symmetric zero-mean membrane
//! noise, and hard-resets to `u_reset` on a spike. With a degenerate noise
//! family the same transition collapses to the deterministic LIF model.

use serde::{Deserialize, Serialize};

use crate::numerics::RngStream;
use crate::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_TAU: f64 = 2.5066282746310002; // sqrt(2*pi)

/// Densities below this are flushed to zero to avoid denormal slowdowns in
/// saturated tails; the effect is far below every test tolerance.
const PDF_FLUSH: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Logistic,
    None,
}

/// Symmetric zero-mean membrane noise: `scale` is the standard deviation for
/// the Gaussian family and the scale parameter for the logistic family; the
/// degenerate `None` family ignores it and yields Heaviside firing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub scale: f64,
}

impl NoiseModel {
    pub fn gaussian(scale: f64) -> Result<Self> {
        NoiseModel {
            family: NoiseFamily::Gaussian,
            scale,
        }
        .validated()
    }

    pub fn logistic(scale: f64) -> Result<Self> {
        NoiseModel {
            family: NoiseFamily::Logistic,
            scale,
        }
        .validated()
    }

    pub fn none() -> Self {
        NoiseModel {
            family: NoiseFamily::None,
            scale: 0.0,
        }
    }

    pub fn validated(self) -> Result<Self> {
        if self.family != NoiseFamily::None && (self.scale.is_nan() || self.scale <= 0.0) {
            return Err(Error::Parameter(format!(
                "noise scale must be > 0, got {}",
                self.scale
            )));
        }
        Ok(self)
    }

    pub fn is_deterministic(&self) -> bool {
        self.family == NoiseFamily::None
    }

    /// CDF of the noise evaluated at `x`; the firing probability at membrane
    /// distance `x = u - v_th`. The `None` family is the Heaviside limit with
    /// the tie rule `cdf(0) = 1`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Parameter(format!("cdf argument must be finite, got {x}")));
        }
        Ok(match self.family {
            NoiseFamily::Gaussian => 0.5 * libm::erfc(-x / (self.scale * SQRT_2)),
            NoiseFamily::Logistic => 1.0 / (1.0 + (-x / self.scale).exp()),
            NoiseFamily::None => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// Probability density of the noise at `x`; the post-synaptic factor used
    /// by the backward pass. Undefined for the deterministic family.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        let v = match self.family {
            NoiseFamily::Gaussian => {
                let z = x / self.scale;
                (-0.5 * z * z).exp() / (self.scale * SQRT_TAU)
            }
            NoiseFamily::Logistic => {
                let e = (-x.abs() / self.scale).exp();
                let denom = 1.0 + e;
                e / (self.scale * denom * denom)
            }
            NoiseFamily::None => {
                return Err(Error::Unsupported(
                    "deterministic neurons have no noise density".into(),
                ))
            }
        };
        Ok(if v < PDF_FLUSH { 0.0 } else { v })
    }

    /// Sample one noise value.
    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        match self.family {
            NoiseFamily::Gaussian => rng.sample_gaussian(self.scale),
            NoiseFamily::Logistic => {
                let u = rng.open_uniform();
                Ok(self.scale * (u / (1.0 - u)).ln())
            }
            NoiseFamily::None => Ok(0.0),
        }
    }
}

/// Discrete LIF constants. Defaults: `tau = 0.5`, `v_th = 1`, `u_reset = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub tau: f64,
    pub v_th: f64,
    pub u_reset: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            tau: 0.5,
            v_th: 1.0,
            u_reset: 0.0,
        }
    }
}

impl LifParams {
    pub fn validated(self) -> Result<Self> {
        if self.tau.is_nan() || self.tau <= 0.0 || self.tau >= 1.0 {
            return Err(Error::Parameter(format!(
                "tau must lie in (0,1), got {}",
                self.tau
            )));
        }
        if !self.v_th.is_finite() || !self.u_reset.is_finite() {
            return Err(Error::Parameter("v_th and u_reset must be finite".into()));
        }
        Ok(self)
    }
}

/// Membrane potentials of one population, one entry per neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub u: Vec<f64>,
}

impl NeuronState {
    pub fn at_reset(n: usize, params: &LifParams) -> Self {
        NeuronState {
            u: vec![params.u_reset; n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Sample,
    Deterministic,
}

/// Result of one population step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: NeuronState,
    pub spikes: Vec<u8>,
    pub fire_prob: Vec<f64>,
    /// Pre-reset membrane potentials `tau * u_prev + drive`.
    pub u_pre: Vec<f64>,
}

/// One population transition given per-neuron Bernoulli draws in `[0, 1)`.
///
/// The membrane integrates the drive, the firing probability is the noise CDF
/// at `u_pre - v_th`, neuron `m` fires iff `draws[m] < fire_prob[m]`, and a
/// firing neuron hard-resets to `u_reset`. Exposing the draws lets callers
/// replay a trajectory under common random numbers.
pub fn step_given_draws(
    state: &NeuronState,
    drive: &[f64],
    params: &LifParams,
    noise: &NoiseModel,
    draws: &[f64],
    mode: SimMode,
) -> Result<StepOutput> {
    if drive.len() != state.len() {
        return Err(Error::Shape(format!(
            "drive length {} vs state length {}",
            drive.len(),
            state.len()
        )));
    }
    if mode == SimMode::Sample && draws.len() != state.len() {
        return Err(Error::Shape(format!(
            "draws length {} vs state length {}",
            draws.len(),
            state.len()
        )));
    }
    let n = state.len();
    let mut u_pre = vec![0.0; n];
    let mut fire_prob = vec![0.0; n];
    let mut spikes = vec![0u8; n];
    let mut u_post = vec![0.0; n];
    for m in 0..n {
        let u = params.tau * state.u[m] + drive[m];
        u_pre[m] = u;
        let gap = u - params.v_th;
        let p = noise.cdf(gap)?;
        fire_prob[m] = p;
        let fired = match mode {
            // Tie rule: the deterministic neuron fires at exactly u = v_th.
            SimMode::Deterministic => gap >= 0.0,
            SimMode::Sample => draws[m] < p,
        };
        spikes[m] = fired as u8;
        u_post[m] = if fired { params.u_reset } else { u };
    }
    Ok(StepOutput {
        state: NeuronState { u: u_post },
        spikes,
        fire_prob,
        u_pre,
    })
}

/// One population transition, drawing the Bernoulli uniforms from `rng`.
pub fn step(
    state: &NeuronState,
    drive: &[f64],
    params: &LifParams,
    noise: &NoiseModel,
    mode: SimMode,
    rng: &mut RngStream,
) -> Result<StepOutput> {
    let draws = match mode {
        SimMode::Sample => (0..state.len()).map(|_| rng.sample_uniform()).collect(),
        SimMode::Deterministic => Vec::new(),
    };
    step_given_draws(state, drive, params, noise, &draws, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gaussian_cdf_at_zero_is_half() {
        let noise = NoiseModel::gaussian(0.3).unwrap();
        assert!((noise.cdf(0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_cdf_matches_standard_normal() {
        // x = sigma corresponds to Phi(1)
        let noise = NoiseModel::gaussian(0.3).unwrap();
        assert!((noise.cdf(0.3).unwrap() - 0.8413447460685429).abs() < 1e-12);
    }

    #[test]
    fn heaviside_family() {
        let noise = NoiseModel::none();
        assert_eq!(noise.cdf(0.1).unwrap(), 1.0);
        assert_eq!(noise.cdf(-0.1).unwrap(), 0.0);
        assert_eq!(noise.cdf(0.0).unwrap(), 1.0);
    }

    #[test]
    fn cdf_rejects_non_finite() {
        let noise = NoiseModel::gaussian(0.3).unwrap();
        assert!(matches!(noise.cdf(f64::NAN), Err(Error::Parameter(_))));
    }

    #[test]
    fn pdf_golden_values() {
        // sigma = 1/sqrt(2) makes the density equal (1/sqrt(pi)) e^{-x^2}
        let erf_match = NoiseModel::gaussian(1.0 / SQRT_2).unwrap();
        assert!((erf_match.pdf(0.0).unwrap() - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
        let narrow = NoiseModel::gaussian(0.3).unwrap();
        assert!((narrow.pdf(0.0).unwrap() - 1.3298076013381091).abs() < 1e-12);
    }

    #[test]
    fn pdf_of_deterministic_family_is_unsupported() {
        assert!(matches!(
            NoiseModel::none().pdf(0.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn pdf_matches_cdf_finite_difference() {
        let h = 1e-5;
        for noise in [
            NoiseModel::gaussian(0.3).unwrap(),
            NoiseModel::gaussian(1.0).unwrap(),
            NoiseModel::logistic(0.4).unwrap(),
        ] {
            let s = noise.scale;
            let mut x = -3.0 * s;
            while x <= 3.0 * s {
                let fd = (noise.cdf(x + h).unwrap() - noise.cdf(x - h).unwrap()) / (2.0 * h);
                assert!(
                    (fd - noise.pdf(x).unwrap()).abs() < 1e-6,
                    "family {:?} at {x}",
                    noise.family
                );
                x += 0.05 * s;
            }
        }
    }

    #[test]
    fn logistic_cdf_midpoint_and_monotone() {
        let noise = NoiseModel::logistic(0.5).unwrap();
        assert!((noise.cdf(0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(noise.cdf(1.0).unwrap() > noise.cdf(0.5).unwrap());
    }

    #[test]
    fn deterministic_step_below_threshold_keeps_membrane() {
        let params = LifParams::default();
        let state = NeuronState { u: vec![0.4] };
        let out = step_given_draws(
            &state,
            &[0.5],
            &params,
            &NoiseModel::none(),
            &[],
            SimMode::Deterministic,
        )
        .unwrap();
        assert_eq!(out.u_pre, vec![0.7]);
        assert_eq!(out.spikes, vec![0]);
        assert_eq!(out.state.u, vec![0.7]);
    }

    #[test]
    fn deterministic_step_above_threshold_resets() {
        let params = LifParams::default();
        let state = NeuronState { u: vec![0.4] };
        let out = step_given_draws(
            &state,
            &[0.9],
            &params,
            &NoiseModel::none(),
            &[],
            SimMode::Deterministic,
        )
        .unwrap();
        assert!((out.u_pre[0] - 1.1).abs() < 1e-15);
        assert_eq!(out.spikes, vec![1]);
        assert_eq!(out.state.u, vec![0.0]);
    }

    #[test]
    fn step_length_mismatch() {
        let params = LifParams::default();
        let state = NeuronState { u: vec![0.0, 0.0] };
        assert!(matches!(
            step_given_draws(
                &state,
                &[0.1],
                &params,
                &NoiseModel::none(),
                &[],
                SimMode::Deterministic
            ),
            Err(Error::Shape(_))
        ));
    }

    // Monte Carlo: with the membrane exactly at threshold the empirical
    // firing rate equals cdf(0) = 1/2.
    #[test]
    fn sample_rate_at_threshold_is_half() {
        let params = LifParams::default();
        let noise = NoiseModel::gaussian(0.3).unwrap();
        let mut rng = RngStream::new(5, 1);
        let n = 100_000;
        let mut fired = 0u32;
        let state = NeuronState { u: vec![0.0] };
        for _ in 0..n {
            let out = step(&state, &[1.0], &params, &noise, SimMode::Sample, &mut rng).unwrap();
            fired += out.spikes[0] as u32;
        }
        let rate = fired as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.005, "rate {rate}");
    }

    // With sigma -> 0, sampled spikes agree with the deterministic neuron
    // whenever the membrane is at least 0.05 from threshold.
    #[test]
    fn heaviside_limit_of_sampling() {
        let params = LifParams::default();
        let noise = NoiseModel::gaussian(1e-4).unwrap();
        let mut rng = RngStream::new(17, 2);
        for trial in 0..10_000 {
            let gap = if trial % 2 == 0 { 0.05 } else { -0.05 };
            let state = NeuronState { u: vec![0.0] };
            let drive = [params.v_th + gap];
            let sampled =
                step(&state, &drive, &params, &noise, SimMode::Sample, &mut rng).unwrap();
            let det = step_given_draws(
                &state,
                &drive,
                &params,
                &NoiseModel::none(),
                &[],
                SimMode::Deterministic,
            )
            .unwrap();
            assert_eq!(sampled.spikes, det.spikes, "gap {gap}");
        }
    }

    proptest! {
        // Firing probability is non-decreasing in the drive.
        #[test]
        fn fire_prob_monotone_in_drive(
            u0 in -1.0f64..1.0,
            d1 in -2.0f64..2.0,
            bump in 0.0f64..2.0,
            scale in 0.05f64..1.0,
        ) {
            let params = LifParams::default();
            let noise = NoiseModel::gaussian(scale).unwrap();
            let state = NeuronState { u: vec![u0] };
            let lo = step_given_draws(&state, &[d1], &params, &noise, &[0.5], SimMode::Sample).unwrap();
            let hi = step_given_draws(&state, &[d1 + bump], &params, &noise, &[0.5], SimMode::Sample).unwrap();
            prop_assert!(hi.fire_prob[0] >= lo.fire_prob[0]);
        }

        // Symmetry of the density.
        #[test]
        fn pdf_is_symmetric(x in -4.0f64..4.0, scale in 0.05f64..2.0) {
            let noise = NoiseModel::gaussian(scale).unwrap();
            prop_assert!((noise.pdf(x).unwrap() - noise.pdf(-x).unwrap()).abs() < 1e-15);
            let logistic = NoiseModel::logistic(scale).unwrap();
            prop_assert!((logistic.pdf(x).unwrap() - logistic.pdf(-x).unwrap()).abs() < 1e-15);
        }

        // After a spike the stored membrane equals u_reset exactly.
        #[test]
        fn reset_is_exact(u0 in -1.0f64..1.0, drive in 1.0f64..3.0) {
            let params = LifParams { u_reset: -0.25, ..LifParams::default() };
            let state = NeuronState { u: vec![u0.max(0.0)] };
            let out = step_given_draws(&state, &[drive + 1.0], &params, &NoiseModel::none(), &[], SimMode::Deterministic).unwrap();
            if out.spikes[0] == 1 {
                prop_assert_eq!(out.state.u[0], -0.25);
            }
        }
    }
}
