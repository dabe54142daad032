//! Continuous-time stability lab for the sub-threshold membrane dynamics.
//!
//! The drift is `f(u, I) = a1*u + B1*I` and the diffusion is
//! `g(u, I) = a2*Id + b2*diag(f(u, I))`, integrated with Euler-Maruyama.
//! Two coupled trajectories share one Wiener path; their difference is the
//! perturbation whose sample Lyapunov exponent the bound formulas
//! `LB = a1 - a2^2/2 - b2^2 - 2*a2*b2` and `UB = a1 - a2^2/2 + b2^2/2 + a2*b2`
//! constrain.
//!
//! For the error dynamics themselves two readings are implemented. The
//! printed form multiplies the diffusion difference by `dt`, which makes the
//! error path a deterministic ODE. The conventional reading multiplies it by
//! the Wiener increment; under that reading the per-unit-error diffusion
//! magnitude is taken as `a2 + b2`, the Frobenius envelope the bound
//! hypothesis admits (it reduces to `a2` in the additive case, where the
//! literal coefficient difference would cancel the additive term entirely
//! and leave nothing for the bounds to constrain).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, RngStream};
use crate::{Error, Result};

/// Drift-diffusion system for one membrane layer.
#[derive(Debug, Clone)]
pub struct SdeSystem {
    pub a1: f64,
    pub a2: f64,
    pub b2: f64,
    /// Input coupling; the membrane resistance is absorbed here.
    pub b1: Matrix,
    pub input: InputSignal,
    pub dim: usize,
}

/// Time-dependent input current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputSignal {
    Zero,
    Constant(Vec<f64>),
}

impl InputSignal {
    fn at(&self, dim: usize) -> Vec<f64> {
        match self {
            InputSignal::Zero => vec![0.0; dim],
            InputSignal::Constant(v) => v.clone(),
        }
    }
}

impl SdeSystem {
    pub fn homogeneous(a1: f64, a2: f64, b2: f64, dim: usize) -> Result<Self> {
        let sys = SdeSystem {
            a1,
            a2,
            b2,
            b1: Matrix::identity(dim),
            input: InputSignal::Zero,
            dim,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a2 < 0.0 || self.b2 < 0.0 {
            return Err(Error::Parameter(format!(
                "noise amplitudes must be non-negative, got a2={} b2={}",
                self.a2, self.b2
            )));
        }
        if self.b1.rows() != self.dim || self.b1.cols() != self.dim {
            return Err(Error::Shape("B1 must be square of size dim".into()));
        }
        Ok(())
    }

    fn drift(&self, u: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        let coupled = self.b1.matvec(input)?;
        Ok(u.iter()
            .zip(coupled)
            .map(|(&ui, ci)| self.a1 * ui + ci)
            .collect())
    }
}

/// Reading of the error-dynamics diffusion term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDiffusion {
    /// Diffusion difference multiplied by `dt` (the printed equation); the
    /// error path is a deterministic ODE.
    PrintedDt,
    /// Diffusion difference multiplied by the Wiener increment.
    WienerDw,
}

/// One perturbation trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPath {
    pub times: Vec<f64>,
    pub error_norms: Vec<f64>,
    pub initial_error: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Simulate the coupled pair `(u, u + eps)` under one shared Wiener path and
/// record the error norms. Diffusion per component: `a2 + b2 * f_i(u, I)`.
pub fn simulate_pair(
    sys: &SdeSystem,
    u0: &[f64],
    eps0: &[f64],
    dt: f64,
    steps: usize,
    rng: &mut RngStream,
) -> Result<ErrorPath> {
    sys.validate()?;
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::Parameter("steps must be >= 1".into()));
    }
    if u0.len() != sys.dim || eps0.len() != sys.dim {
        return Err(Error::Shape("u0/eps0 length must equal dim".into()));
    }
    let sqrt_dt = dt.sqrt();
    let mut u = u0.to_vec();
    let mut u_e: Vec<f64> = u0.iter().zip(eps0).map(|(a, b)| a + b).collect();
    let mut times = Vec::with_capacity(steps + 1);
    let mut norms = Vec::with_capacity(steps + 1);
    times.push(0.0);
    norms.push(norm(eps0));
    for k in 0..steps {
        let input = sys.input.at(sys.dim);
        let f_u = sys.drift(&u, &input)?;
        let f_ue = sys.drift(&u_e, &input)?;
        for i in 0..sys.dim {
            let dw = rng.sample_gaussian(1.0)? * sqrt_dt;
            u[i] += f_u[i] * dt + (sys.a2 + sys.b2 * f_u[i]) * dw;
            u_e[i] += f_ue[i] * dt + (sys.a2 + sys.b2 * f_ue[i]) * dw;
        }
        let err: Vec<f64> = u_e.iter().zip(&u).map(|(a, b)| a - b).collect();
        let n = norm(&err);
        if !n.is_finite() || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k,
                message: "pair simulation blew up".into(),
            });
        }
        times.push((k + 1) as f64 * dt);
        norms.push(n);
    }
    Ok(ErrorPath {
        times,
        error_norms: norms,
        initial_error: eps0.to_vec(),
    })
}

/// Integrate the error dynamics directly: `d eps = a1*eps*dt + D(eps)*{dt|dW}`
/// with per-component diffusion magnitude `(a2 + b2) * eps_i`.
pub fn simulate_error_path(
    sys: &SdeSystem,
    eps0: &[f64],
    dt: f64,
    steps: usize,
    rng: &mut RngStream,
    variant: ErrorDiffusion,
) -> Result<ErrorPath> {
    sys.validate()?;
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::Parameter("steps must be >= 1".into()));
    }
    if eps0.len() != sys.dim {
        return Err(Error::Shape("eps0 length must equal dim".into()));
    }
    let c = sys.a2 + sys.b2;
    let sqrt_dt = dt.sqrt();
    let mut eps = eps0.to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut norms = Vec::with_capacity(steps + 1);
    times.push(0.0);
    norms.push(norm(&eps));
    for k in 0..steps {
        for e in eps.iter_mut() {
            let diffusion = match variant {
                ErrorDiffusion::PrintedDt => c * *e * dt,
                ErrorDiffusion::WienerDw => c * *e * rng.sample_gaussian(1.0)? * sqrt_dt,
            };
            *e += sys.a1 * *e * dt + diffusion;
        }
        let n = norm(&eps);
        if !n.is_finite() {
            return Err(Error::Divergence {
                step: k,
                message: "error path blew up".into(),
            });
        }
        times.push((k + 1) as f64 * dt);
        norms.push(n);
    }
    Ok(ErrorPath {
        times,
        error_norms: norms,
        initial_error: eps0.to_vec(),
    })
}

/// Per-path sample Lyapunov exponents after burn-in, returned as
/// (ensemble mean, standard error of the mean).
pub fn estimate_lyapunov(paths: &[ErrorPath], burn_in_fraction: f64) -> Result<(f64, f64)> {
    if paths.len() < 2 {
        return Err(Error::InsufficientData(
            "lyapunov estimation needs at least 2 paths".into(),
        ));
    }
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::Parameter("burn_in_fraction must lie in [0,1)".into()));
    }
    let t_final = *paths[0].times.last().unwrap();
    for p in paths {
        if (p.times.last().unwrap() - t_final).abs() > 1e-12 {
            return Err(Error::Parameter("paths must share the final time".into()));
        }
    }
    let mut les = Vec::with_capacity(paths.len());
    for p in paths {
        let k_burn = ((p.times.len() - 1) as f64 * burn_in_fraction) as usize;
        let t_burn = p.times[k_burn];
        let n_burn = p.error_norms[k_burn];
        let n_final = *p.error_norms.last().unwrap();
        if n_burn <= 0.0 || n_final <= 0.0 {
            return Err(Error::Degenerate(
                "zero error norm encountered on a path".into(),
            ));
        }
        les.push((n_final.ln() - n_burn.ln()) / (t_final - t_burn));
    }
    let n = les.len() as f64;
    let mean = les.iter().sum::<f64>() / n;
    let var = les.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Lower and upper bounds on the sample Lyapunov exponent.
pub fn theorem1_bounds(a1: f64, a2: f64, b2: f64) -> Result<(f64, f64)> {
    if a2 < 0.0 || b2 < 0.0 {
        return Err(Error::Parameter(
            "noise amplitudes must be non-negative".into(),
        ));
    }
    let lb = a1 - 0.5 * a2 * a2 - b2 * b2 - 2.0 * a2 * b2;
    let ub = a1 - 0.5 * a2 * a2 + 0.5 * b2 * b2 + a2 * b2;
    Ok((lb, ub))
}

/// One row of the stability sweep CSV.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub a1: f64,
    pub a2: f64,
    pub b2: f64,
    pub variant: ErrorDiffusion,
    pub lb: f64,
    pub ub: f64,
    pub le_mean: f64,
    pub le_stderr: f64,
    pub dt: f64,
    pub t_final: f64,
    pub n_paths: usize,
}

/// Sweep a parameter grid, estimating the Lyapunov exponent per point.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    a1_grid: &[f64],
    a2_grid: &[f64],
    b2_grid: &[f64],
    variant: ErrorDiffusion,
    dt: f64,
    t_final: f64,
    n_paths: usize,
    burn_in_fraction: f64,
    rng: &RngStream,
) -> Result<Vec<SweepRow>> {
    let steps = (t_final / dt).round() as usize;
    let mut rows = Vec::new();
    let mut point = 0u64;
    for &a1 in a1_grid {
        for &a2 in a2_grid {
            for &b2 in b2_grid {
                let sys = SdeSystem::homogeneous(a1, a2, b2, 2)?;
                let eps0 = vec![1.0 / (sys.dim as f64).sqrt(); sys.dim];
                let point_rng = rng.child(0x57EE ^ point);
                let paths: Vec<Result<ErrorPath>> = (0..n_paths)
                    .into_par_iter()
                    .map(|p| {
                        let mut path_rng = point_rng.child(p as u64);
                        simulate_error_path(&sys, &eps0, dt, steps, &mut path_rng, variant)
                    })
                    .collect();
                let paths: Result<Vec<ErrorPath>> = paths.into_iter().collect();
                let (le_mean, le_stderr) = estimate_lyapunov(&paths?, burn_in_fraction)?;
                let (lb, ub) = theorem1_bounds(a1, a2, b2)?;
                rows.push(SweepRow {
                    a1,
                    a2,
                    b2,
                    variant,
                    lb,
                    ub,
                    le_mean,
                    le_stderr,
                    dt,
                    t_final,
                    n_paths,
                });
                point += 1;
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Noiseless linear ODE: the error decays like e^{a1 t}.
    #[test]
    fn noiseless_pair_decays_exponentially() {
        let sys = SdeSystem::homogeneous(-1.0, 0.0, 0.0, 2).unwrap();
        let mut rng = RngStream::new(1, 0);
        let dt = 1e-3;
        let steps = 2000;
        let eps0 = vec![1.0 / 2f64.sqrt(); 2];
        let path = simulate_pair(&sys, &[0.3, -0.2], &eps0, dt, steps, &mut rng).unwrap();
        let t = *path.times.last().unwrap();
        let expected = (-t).exp();
        let got = *path.error_norms.last().unwrap();
        assert!(
            (got - expected).abs() / expected < 10.0 * dt,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn zero_initial_error_stays_zero() {
        let sys = SdeSystem::homogeneous(-1.0, 0.5, 0.25, 2).unwrap();
        let mut rng = RngStream::new(2, 0);
        let path = simulate_pair(&sys, &[0.1, 0.1], &[0.0, 0.0], 1e-3, 500, &mut rng).unwrap();
        assert!(path.error_norms.iter().all(|&n| n == 0.0));
    }

    // Additive noise cancels between the shared-Wiener pair, so the error is
    // the deterministic decay e^{a1 t}.
    #[test]
    fn additive_pair_error_is_deterministic() {
        let a1 = -2.0;
        let sys = SdeSystem::homogeneous(a1, 1.0, 0.0, 2).unwrap();
        let mut rng = RngStream::new(3, 0);
        let dt = 1e-3;
        let steps = 1500;
        let eps0 = vec![0.6, 0.8];
        let path = simulate_pair(&sys, &[0.0, 0.0], &eps0, dt, steps, &mut rng).unwrap();
        for (k, (&t, &n)) in path.times.iter().zip(&path.error_norms).enumerate() {
            let expected = (a1 * t).exp();
            assert!(
                (n - expected).abs() / expected < 10.0 * dt,
                "step {k}: {n} vs {expected}"
            );
        }
    }

    #[test]
    fn lyapunov_of_exact_exponential_paths() {
        let dt = 1e-2;
        let steps = 1000;
        let make_path = |rate: f64| {
            let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
            let norms: Vec<f64> = times.iter().map(|&t| (rate * t).exp()).collect();
            ErrorPath {
                times,
                error_norms: norms,
                initial_error: vec![1.0],
            }
        };
        let paths = vec![make_path(-2.0), make_path(-2.0)];
        let (mean, se) = estimate_lyapunov(&paths, 0.2).unwrap();
        assert!((mean + 2.0).abs() < 1e-9);
        assert!(se < 1e-9);
    }

    #[test]
    fn lyapunov_ignores_bounded_oscillations() {
        let dt = 1e-2;
        let steps = 5000;
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let make_path = |phase: f64| ErrorPath {
            times: times.clone(),
            error_norms: times
                .iter()
                .map(|&t| (-2.0 * t).exp() * (1.0 + 0.2 * (3.0 * t + phase).sin()))
                .collect(),
            initial_error: vec![1.0],
        };
        let paths = vec![make_path(0.0), make_path(1.0), make_path(2.0)];
        let (mean, _) = estimate_lyapunov(&paths, 0.2).unwrap();
        assert!((mean + 2.0).abs() < 0.02, "mean {mean}");
    }

    // Closed form for the additive case: LE = a1 - a2^2/2 = -2.5.
    #[test]
    fn additive_error_sde_matches_closed_form() {
        let sys = SdeSystem::homogeneous(-2.0, 1.0, 0.0, 2).unwrap();
        let dt = 1e-3;
        let steps = 50_000;
        let rng = RngStream::new(7, 0);
        let paths: Vec<ErrorPath> = (0..100)
            .map(|p| {
                let mut path_rng = rng.child(p);
                simulate_error_path(
                    &sys,
                    &[0.6, 0.8],
                    dt,
                    steps,
                    &mut path_rng,
                    ErrorDiffusion::WienerDw,
                )
                .unwrap()
            })
            .collect();
        let (mean, se) = estimate_lyapunov(&paths, 0.2).unwrap();
        assert!(
            (-2.65..=-2.35).contains(&mean),
            "LE mean {mean} (se {se}) outside [-2.65, -2.35]"
        );
    }

    #[test]
    fn printed_variant_is_deterministic() {
        let sys = SdeSystem::homogeneous(-1.0, 0.5, 0.25, 2).unwrap();
        let dt = 1e-3;
        let mut r1 = RngStream::new(10, 0);
        let mut r2 = RngStream::new(11, 1);
        let p1 =
            simulate_error_path(&sys, &[1.0, 0.0], dt, 1000, &mut r1, ErrorDiffusion::PrintedDt)
                .unwrap();
        let p2 =
            simulate_error_path(&sys, &[1.0, 0.0], dt, 1000, &mut r2, ErrorDiffusion::PrintedDt)
                .unwrap();
        assert_eq!(p1.error_norms, p2.error_norms);
        // rate a1 + a2 + b2 = -0.25
        let t = *p1.times.last().unwrap();
        let expected = (-0.25 * t).exp();
        let got = *p1.error_norms.last().unwrap();
        assert!((got - expected).abs() / expected < 10.0 * dt);
    }

    #[test]
    fn theorem1_bound_values() {
        assert_eq!(theorem1_bounds(-2.0, 0.0, 0.0).unwrap(), (-2.0, -2.0));
        assert_eq!(theorem1_bounds(-2.0, 1.0, 0.0).unwrap(), (-2.5, -2.5));
        let (lb, ub) = theorem1_bounds(-1.0, 1.0, 0.5).unwrap();
        assert!((lb + 2.75).abs() < 1e-15);
        assert!((ub + 0.875).abs() < 1e-15);
    }

    #[test]
    fn bounds_reject_negative_amplitudes() {
        assert!(theorem1_bounds(-1.0, -0.1, 0.0).is_err());
        assert!(theorem1_bounds(-1.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn lb_never_exceeds_ub_on_grid() {
        for a1 in [-2.0, -1.0, 0.5] {
            for a2 in [0.0, 0.5, 1.0, 2.0] {
                for b2 in [0.0, 0.25, 0.5, 1.0] {
                    let (lb, ub) = theorem1_bounds(a1, a2, b2).unwrap();
                    assert!(lb <= ub, "({a1},{a2},{b2})");
                }
            }
        }
    }

    // The paper's additive-noise sharpening claim as a formula property:
    // UB(a1, a2>0, 0) < LB(a1, 0, 0) = a1.
    #[test]
    fn additive_noise_sharpens_the_upper_bound() {
        for a1 in [-2.0, -1.0, -0.25] {
            let (lb_free, _) = theorem1_bounds(a1, 0.0, 0.0).unwrap();
            assert_eq!(lb_free, a1);
            for a2 in [0.25, 0.5, 1.0] {
                let (_, ub_add) = theorem1_bounds(a1, a2, 0.0).unwrap();
                assert!(ub_add < lb_free);
            }
        }
    }

    #[test]
    fn degenerate_paths_are_rejected() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let zeros = ErrorPath {
            times: times.clone(),
            error_norms: vec![0.0; 11],
            initial_error: vec![0.0],
        };
        let ok = ErrorPath {
            times,
            error_norms: vec![1.0; 11],
            initial_error: vec![1.0],
        };
        assert!(matches!(
            estimate_lyapunov(&[zeros, ok], 0.2),
            Err(Error::Degenerate(_))
        ));
    }

    // Halving dt moves the estimate by less than twice the ensemble SE.
    #[test]
    fn integrator_convergence_in_dt() {
        let sys = SdeSystem::homogeneous(-2.0, 0.5, 0.25, 2).unwrap();
        let run = |dt: f64, seed: u64| {
            let steps = (20.0 / dt).round() as usize;
            let rng = RngStream::new(seed, 0);
            let paths: Vec<ErrorPath> = (0..200)
                .map(|p| {
                    let mut path_rng = rng.child(p);
                    simulate_error_path(
                        &sys,
                        &[1.0, 0.5],
                        dt,
                        steps,
                        &mut path_rng,
                        ErrorDiffusion::WienerDw,
                    )
                    .unwrap()
                })
                .collect();
            estimate_lyapunov(&paths, 0.2).unwrap()
        };
        let (le_coarse, se_coarse) = run(2e-3, 41);
        let (le_fine, se_fine) = run(1e-3, 42);
        let se = se_coarse.hypot(se_fine);
        assert!(
            (le_coarse - le_fine).abs() < 2.0 * se.max(0.02),
            "coarse {le_coarse} fine {le_fine} se {se}"
        );
    }

    // Estimated LE falls inside [LB - 0.15, UB + 0.15] across the grid.
    #[test]
    fn bound_containment_on_grid() {
        let rng = RngStream::new(2026, 0);
        let rows = run_sweep(
            &[-2.0, -1.0],
            &[0.0, 0.5, 1.0],
            &[0.0, 0.25, 0.5],
            ErrorDiffusion::WienerDw,
            1e-3,
            20.0,
            64,
            0.2,
            &rng,
        )
        .unwrap();
        assert_eq!(rows.len(), 18);
        for row in rows {
            assert!(
                row.le_mean >= row.lb - 0.15 && row.le_mean <= row.ub + 0.15,
                "({}, {}, {}): LE {} outside [{}, {}] +- 0.15",
                row.a1,
                row.a2,
                row.b2,
                row.le_mean,
                row.lb,
                row.ub
            );
        }
    }
}
