//! Task dispatch and artifact persistence.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::analysis;
use crate::learning::{
    self, backward, exact_gradient, local_marg_statistics, Objective, OptMethod, OptimizerState,
    PseudoDeriv, Rule, TrainConfig,
};
use crate::network::{from_json, to_json, LayerSpec, Loss, Network, ReadoutSpec};
use crate::neuron::{LifParams, NoiseFamily, NoiseModel, SimMode};
use crate::numerics::{Matrix, RngStream};
use crate::perturb::{self, AttackMethod, GradSource};
use crate::stability;
use crate::{Error, Result};

use super::config::{ExperimentConfig, NetworkConfig, TaskKind};
use super::dataset::{generate_task, SpikeDataset};
use super::fixtures;

/// Files produced by a run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub summary: PathBuf,
    pub files: Vec<PathBuf>,
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, to_json(net)?)?;
    Ok(())
}

/// Save a model artifact with run provenance. The `meta` object is ignored
/// by `load_model`, so round-trips stay bit-exact.
fn save_model_with_meta(net: &Network, path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let mut doc: serde_json::Value = serde_json::from_str(&to_json(net)?)
        .map_err(|e| Error::MalformedModel(e.to_string()))?;
    doc.as_object_mut().unwrap().insert(
        "meta".into(),
        serde_json::json!({"seed": cfg.seed, "config_sha256": cfg.sha256()}),
    );
    fs::write(path, serde_json::to_string_pretty(&doc).unwrap())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path)?;
    from_json(&text)
}

fn artifact_header(cfg: &ExperimentConfig) -> String {
    format!("# seed={},config_sha256={}\n", cfg.seed, cfg.sha256())
}

fn write_csv(
    cfg: &ExperimentConfig,
    path: &Path,
    columns: &str,
    rows: &[String],
) -> Result<()> {
    let mut text = artifact_header(cfg);
    text.push_str(columns);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_summary(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    task_fields: serde_json::Value,
) -> Result<PathBuf> {
    let summary = json!({
        "task": cfg.task.to_string(),
        "seed": cfg.seed,
        "config_sha256": cfg.sha256(),
        "build": {
            "name": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
        },
        "config": cfg,
        "results": task_fields,
    });
    let path = out_dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).unwrap())?;
    Ok(path)
}

/// Build a fresh network for the configured dataset dimensions.
pub fn build_network(
    net_cfg: &NetworkConfig,
    in_dim: usize,
    n_classes: usize,
    rng: &mut RngStream,
) -> Result<Network> {
    let noise = match net_cfg.noise_family {
        NoiseFamily::None => NoiseModel::none(),
        NoiseFamily::Gaussian => NoiseModel::gaussian(net_cfg.noise_scale)?,
        NoiseFamily::Logistic => NoiseModel::logistic(net_cfg.noise_scale)?,
    };
    let mut layers = Vec::new();
    let mut fan_in = in_dim;
    for &dim in &net_cfg.hidden_dims {
        let scale = net_cfg.init_scale / (fan_in as f64).sqrt();
        let mut data = Vec::with_capacity(dim * fan_in);
        for _ in 0..dim * fan_in {
            data.push(rng.sample_gaussian(scale)?);
        }
        layers.push(LayerSpec::new(
            Matrix::new(dim, fan_in, data)?,
            vec![net_cfg.bias_init; dim],
            LifParams::default(),
            noise,
        )?);
        fan_in = dim;
    }
    let scale = net_cfg.init_scale / (fan_in as f64).sqrt();
    let mut data = Vec::with_capacity(n_classes * fan_in);
    for _ in 0..n_classes * fan_in {
        data.push(rng.sample_gaussian(scale)?);
    }
    Network::new(
        layers,
        ReadoutSpec {
            weights: Matrix::new(n_classes, fan_in, data)?,
            bias: vec![0.0; n_classes],
        },
        net_cfg.loss_mode,
    )
}

fn train_one(
    cfg: &ExperimentConfig,
    data: &SpikeDataset,
    rule: Rule,
    noise_family: NoiseFamily,
    seed_tag: u64,
) -> Result<(Network, Vec<learning::EpochRow>)> {
    let mut net_cfg = cfg.network.clone();
    net_cfg.noise_family = noise_family;
    let root = RngStream::new(cfg.seed, seed_tag);
    let mut init_rng = root.child(0x1217);
    let mut net = build_network(&net_cfg, data.spec.input_dim, data.spec.n_classes, &mut init_rng)?;
    let train_cfg = TrainConfig {
        epochs: cfg.optimizer.epochs,
        batch_size: cfg.optimizer.batch_size,
        method: cfg.optimizer.method,
        lr: cfg.optimizer.lr,
        rule,
    };
    let mut train_rng = root.child(0x7121);
    let rows = learning::train(&mut net, &data.train, &data.test, &train_cfg, &mut train_rng)?;
    Ok((net, rows))
}

fn metrics_rows(rows: &[learning::EpochRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.epoch, r.split, r.loss, r.accuracy, r.lr, r.wall_ms
            )
        })
        .collect()
}

fn run_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let mut data_rng = RngStream::new(cfg.seed, 0xDA7A);
    let data = generate_task(&cfg.dataset, &mut data_rng)?;
    let (net, rows) = train_one(cfg, &data, cfg.optimizer.rule, cfg.network.noise_family, 0)?;
    let metrics = out_dir.join("metrics.csv");
    write_csv(
        cfg,
        &metrics,
        "epoch,split,loss,accuracy,lr,wall_ms",
        &metrics_rows(&rows),
    )?;
    let model = out_dir.join("model.json");
    save_model_with_meta(&net, &model, cfg)?;
    let last_test = rows
        .iter()
        .rev()
        .find(|r| r.split == learning::Split::Test)
        .ok_or_else(|| Error::InsufficientData("no epochs ran".into()))?;
    let summary = write_summary(
        cfg,
        out_dir,
        json!({
            "final_test_accuracy": last_test.accuracy,
            "final_test_loss": last_test.loss,
            "epochs": cfg.optimizer.epochs,
            "model": model.file_name().unwrap().to_string_lossy(),
        }),
    )?;
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        summary,
        files: vec![metrics, model],
    })
}

fn obtain_model(cfg: &ExperimentConfig, data: &SpikeDataset) -> Result<Network> {
    match &cfg.model_in {
        Some(path) => load_model(path),
        None => Ok(train_one(cfg, data, cfg.optimizer.rule, cfg.network.noise_family, 0)?.0),
    }
}

fn run_eval(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let mut data_rng = RngStream::new(cfg.seed, 0xDA7A);
    let data = generate_task(&cfg.dataset, &mut data_rng)?;
    let net = obtain_model(cfg, &data)?;
    let mode = if net.layers.iter().all(|l| l.noise.is_deterministic()) {
        SimMode::Deterministic
    } else {
        SimMode::Sample
    };
    let eval_rng = RngStream::new(cfg.seed, 0xE7A1);
    let (loss, acc) = learning::evaluate(&net, &data.test, mode, &eval_rng)?;
    let summary = write_summary(
        cfg,
        out_dir,
        json!({"test_loss": loss, "test_accuracy": acc, "n_test": data.test.len()}),
    )?;
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        summary,
        files: vec![],
    })
}

/// Evaluate a model under one attack at one intensity. Predictions use rate
/// decoding: logits averaged over `eval_trials` independent perturbed
/// presentations, identically for stochastic and deterministic models.
#[allow(clippy::too_many_arguments)]
fn attacked_accuracy(
    net: &Network,
    data: &[(Vec<Vec<f64>>, usize)],
    method: AttackMethod,
    intensity: f64,
    do_iters: usize,
    do_lr: f64,
    eval_trials: usize,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    let mode = if net.layers.iter().all(|l| l.noise.is_deterministic()) {
        SimMode::Deterministic
    } else {
        SimMode::Sample
    };
    let trials = eval_trials.max(1);
    let results: Vec<Result<(f64, bool)>> = data
        .par_iter()
        .enumerate()
        .map(|(i, (input, label))| {
            let loss_fn = Loss::CrossEntropy { target: *label };
            let mut loss_acc = 0.0;
            let mut mean_logits: Option<Vec<f64>> = None;
            for trial in 0..trials {
                let mut item_rng = rng.child((i as u64) << 8 | trial as u64);
                let trace = match method {
                    AttackMethod::SpikeFlip => perturb::forward_with_spike_flip(
                        net,
                        input,
                        mode,
                        intensity,
                        &mut item_rng,
                        None,
                    )?,
                    AttackMethod::EventDrop => {
                        let dropped = perturb::event_drop(input, intensity, &mut item_rng)?;
                        net.forward(&dropped, mode, &mut item_rng, None)?
                    }
                    AttackMethod::Fgsm => {
                        let adv = perturb::fgsm(
                            net,
                            input,
                            &loss_fn,
                            intensity,
                            GradSource::for_network(net),
                            &mut item_rng,
                            Some((0.0, 1.0)),
                        )?;
                        net.forward(&adv, mode, &mut item_rng, None)?
                    }
                    AttackMethod::DirectOpt => {
                        let adv = perturb::direct_opt(
                            net,
                            input,
                            &loss_fn,
                            intensity,
                            do_iters,
                            do_lr,
                            GradSource::for_network(net),
                            &mut item_rng,
                        )?;
                        net.forward(&adv, mode, &mut item_rng, None)?
                    }
                };
                loss_acc += crate::network::trace_loss(net, &trace.logits, &loss_fn)? / trials as f64;
                let z = trace.mean_logits();
                match &mut mean_logits {
                    Some(acc) => {
                        for (a, zi) in acc.iter_mut().zip(&z) {
                            *a += zi / trials as f64;
                        }
                    }
                    None => {
                        mean_logits = Some(z.iter().map(|zi| zi / trials as f64).collect())
                    }
                }
            }
            let logits = mean_logits.unwrap();
            let predicted = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, _)| k)
                .unwrap_or(0);
            Ok((loss_acc, predicted == *label))
        })
        .collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for r in results {
        let (l, ok) = r?;
        loss_sum += l;
        correct += ok as usize;
    }
    Ok((
        loss_sum / data.len() as f64,
        correct as f64 / data.len() as f64,
    ))
}

fn run_perturb(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let mut data_rng = RngStream::new(cfg.seed, 0xDA7A);
    let data = generate_task(&cfg.dataset, &mut data_rng)?;
    let mut rows = Vec::new();
    let mut nsnn_mean = vec![0.0; cfg.attack.intensities.len()];
    let mut dsnn_mean = vec![0.0; cfg.attack.intensities.len()];
    for seed_idx in 0..cfg.attack.n_seeds {
        let nsnn = train_one(cfg, &data, Rule::Ndl, NoiseFamily::Gaussian, seed_idx as u64)?.0;
        let dsnn = train_one(cfg, &data, Rule::Sgl, NoiseFamily::None, seed_idx as u64)?.0;
        for (kind, net) in [("nsnn", &nsnn), ("dsnn", &dsnn)] {
            for (ii, &intensity) in cfg.attack.intensities.iter().enumerate() {
                let eval_rng = RngStream::new(cfg.seed, 0xA77A ^ seed_idx as u64);
                let (loss, acc) = attacked_accuracy(
                    net,
                    &data.test,
                    cfg.attack.method,
                    intensity,
                    cfg.attack.do_iters,
                    cfg.attack.do_lr,
                    cfg.attack.eval_trials,
                    &eval_rng,
                )?;
                rows.push(format!(
                    "{:?},{},{},{},{},{}",
                    cfg.attack.method, intensity, kind, seed_idx, loss, acc
                ));
                if kind == "nsnn" {
                    nsnn_mean[ii] += acc / cfg.attack.n_seeds as f64;
                } else {
                    dsnn_mean[ii] += acc / cfg.attack.n_seeds as f64;
                }
            }
        }
    }
    let sweep = out_dir.join("robustness.csv");
    write_csv(
        cfg,
        &sweep,
        "attack,intensity,model_kind,seed,loss,accuracy",
        &rows,
    )?;
    let summary = write_summary(
        cfg,
        out_dir,
        json!({
            "intensities": cfg.attack.intensities,
            "nsnn_mean_accuracy": nsnn_mean,
            "dsnn_mean_accuracy": dsnn_mean,
            "n_seeds": cfg.attack.n_seeds,
        }),
    )?;
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        summary,
        files: vec![sweep],
    })
}

fn run_stability(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let s = &cfg.stability;
    let rng = RngStream::new(cfg.seed, 0x5DE0);
    let rows = stability::run_sweep(
        &s.a1_grid,
        &s.a2_grid,
        &s.b2_grid,
        s.variant,
        s.dt,
        s.t_final,
        s.n_paths,
        s.burn_in,
        &rng,
    )?;
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{:?},{},{},{},{},{},{},{}",
                r.a1,
                r.a2,
                r.b2,
                r.variant,
                r.lb,
                r.ub,
                r.le_mean,
                r.le_stderr,
                r.dt,
                r.t_final,
                r.n_paths
            )
        })
        .collect();
    let sweep = out_dir.join("sweep.csv");
    write_csv(
        cfg,
        &sweep,
        "a1,a2,b2,variant,lb,ub,le_mean,le_stderr,dt,t_final,n_paths",
        &csv_rows,
    )?;
    let contained = rows
        .iter()
        .filter(|r| r.le_mean >= r.lb - 0.15 && r.le_mean <= r.ub + 0.15)
        .count();
    let summary = write_summary(
        cfg,
        out_dir,
        json!({
            "grid_points": rows.len(),
            "contained_within_slack": contained,
        }),
    )?;
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        summary,
        files: vec![sweep],
    })
}

fn run_coding(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let mut data_rng = RngStream::new(cfg.seed, 0xDA7A);
    let data = generate_task(&cfg.dataset, &mut data_rng)?;
    let net = obtain_model(cfg, &data)?;
    if net.layers.iter().all(|l| l.noise.is_deterministic()) {
        return Err(Error::Degenerate(
            "coding analysis needs a stochastic network".into(),
        ));
    }
    // fresh stimuli drawn from the task distribution
    let mut stim_spec = cfg.dataset.clone();
    stim_spec.n_train = cfg.coding.n_samples;
    stim_spec.n_test = 1;
    let mut stim_rng = RngStream::new(cfg.seed, 0xC0D1);
    let stimuli = generate_task(&stim_spec, &mut stim_rng)?;
    let inputs: Vec<Vec<Vec<f64>>> = stimuli.train.into_iter().map(|(x, _)| x).collect();
    let rng = RngStream::new(cfg.seed, 0xC0D2);
    let report =
        analysis::coding_report(&net, &inputs, cfg.coding.n_trials, &rng, cfg.coding.n_bootstrap)?;
    let rows: Vec<String> = report
        .per_sample
        .iter()
        .enumerate()
        .map(|(i, (f, c))| format!("{i},{f},{c}"))
        .collect();
    let report_csv = out_dir.join("report.csv");
    write_csv(cfg, &report_csv, "sample_id,mean_fano,mean_cosine", &rows)?;
    let summary = write_summary(
        cfg,
        out_dir,
        json!({
            "pearson_r": report.pearson,
            "bootstrap_ci_95": report.bootstrap_ci,
            "n_samples": report.per_sample.len(),
            "n_trials": report.n_trials,
            "prediction_space": report.prediction_space,
        }),
    )?;
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        summary,
        files: vec![report_csv],
    })
}

fn run_grad_check(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let net = fixtures::grad_check_net();
    let input = fixtures::grad_check_input(cfg.grad_check.t_steps);
    let loss = Loss::CrossEntropy {
        target: cfg.grad_check.target,
    };
    let exact = exact_gradient(&net, &input, &loss)?;
    let mut rng = RngStream::new(cfg.seed, 0x6C47);
    let (stats, _) = local_marg_statistics(&net, &input, &loss, &mut rng, cfg.grad_check.n_samples)?;
    let z = stats.max_bias_over_se_floored(&exact.flat(), 1e-8);
    let verdict_path = out_dir.join("verdict.json");
    fs::write(
        &verdict_path,
        serde_json::to_string_pretty(&json!({
            "max_abs_bias_over_se": z,
            "n_samples": cfg.grad_check.n_samples,
            "pass": z < 3.0,
            "seed": cfg.seed,
            "config_sha256": cfg.sha256(),
        }))
        .unwrap(),
    )?;
    let summary = write_summary(
        cfg,
        out_dir,
        json!({"max_abs_bias_over_se": z, "pass": z < 3.0}),
    )?;
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        summary,
        files: vec![verdict_path],
    })
}

/// Teacher-student spike-train fitting with the PSP-kernel loss.
fn run_fit_spikes(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let f = &cfg.fit;
    let root = RngStream::new(cfg.seed, 0xF17);
    // synthetic "recorded" data: spike trains of a fixed random teacher
    let teacher_cfg = NetworkConfig {
        hidden_dims: vec![f.target_neurons],
        noise_family: NoiseFamily::Gaussian,
        noise_scale: f.noise_scale,
        ..NetworkConfig::default()
    };
    let mut teacher_rng = root.child(0x7EAC);
    let teacher = build_network(&teacher_cfg, f.input_dim, 2, &mut teacher_rng)?;
    let stim_spec = super::dataset::SyntheticTaskSpec {
        n_classes: 2,
        input_dim: f.input_dim,
        t_steps: f.t_steps,
        n_train: f.n_train,
        n_test: f.n_test,
        ..Default::default()
    };
    let mut stim_rng = root.child(0x57A7);
    let stimuli = generate_task(&stim_spec, &mut stim_rng)?;
    let record = |inputs: &[(Vec<Vec<f64>>, usize)], tag: u64| -> Result<Vec<(Vec<Vec<f64>>, Matrix)>> {
        inputs
            .iter()
            .enumerate()
            .map(|(i, (x, _))| {
                let mut rec_rng = root.child(tag ^ (i as u64) << 16);
                let trace = teacher.forward(x, SimMode::Sample, &mut rec_rng, None)?;
                Ok((x.clone(), trace.final_layer_spikes()))
            })
            .collect()
    };
    let train_pairs = record(&stimuli.train, 0xF1701)?;
    let test_pairs = record(&stimuli.test, 0xF1702)?;

    let student_cfg = NetworkConfig {
        hidden_dims: vec![f.target_neurons],
        noise_family: NoiseFamily::Gaussian,
        noise_scale: f.noise_scale,
        ..NetworkConfig::default()
    };
    let mut student_rng = root.child(0x57D7);
    let mut student = build_network(&student_cfg, f.input_dim, 2, &mut student_rng)?;

    let mmd_eval = |net: &Network, pairs: &[(Vec<Vec<f64>>, Matrix)], rng: &RngStream| -> Result<(f64, f64)> {
        let mut loss_sum = 0.0;
        let mut pred_flat = Vec::new();
        let mut rec_flat = Vec::new();
        for (i, (x, target)) in pairs.iter().enumerate() {
            let mut item_rng = rng.child(i as u64);
            let trace = net.forward(x, SimMode::Sample, &mut item_rng, None)?;
            let predicted = trace.final_layer_spikes();
            loss_sum += analysis::psp_mmd_loss(&predicted, target, f.psp_tau)?;
            for n in 0..predicted.rows() {
                pred_flat.extend(analysis::psp_filter(predicted.row(n), f.psp_tau)?);
                rec_flat.extend(analysis::psp_filter(target.row(n), f.psp_tau)?);
            }
        }
        let corr = analysis::pearson_r(&pred_flat, &rec_flat).unwrap_or(0.0);
        Ok((loss_sum / pairs.len() as f64, corr))
    };

    let total_steps = f.epochs * train_pairs.len();
    let mut opt = OptimizerState::new(OptMethod::Adam, f.lr, total_steps, student.param_count());
    let mut rows = Vec::new();
    for epoch in 0..f.epochs {
        let started = std::time::Instant::now();
        for (i, (x, target)) in train_pairs.iter().enumerate() {
            let mut fwd_rng = root.child(0x0F17 ^ (epoch as u64) << 24 ^ i as u64);
            let trace = student.forward(x, SimMode::Sample, &mut fwd_rng, None)?;
            let objective = Objective::SpikeTrain {
                target: target.clone(),
                psp_tau: f.psp_tau,
            };
            let pass = backward(&student, &trace, &objective, PseudoDeriv::NoisePdf)?;
            if !pass.grads.all_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let mut params = student.params_flat();
            opt.apply(&mut params, &pass.grads.flat())?;
            student.set_params_flat(&params)?;
        }
        let wall_ms = started.elapsed().as_millis() as u64;
        let (train_loss, train_corr) = mmd_eval(&student, &train_pairs, &root.child(0xE0 ^ epoch as u64))?;
        let (test_loss, test_corr) = mmd_eval(&student, &test_pairs, &root.child(0xE1 ^ epoch as u64))?;
        if !train_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        rows.push(format!("{epoch},train,{train_loss},{train_corr},{},{wall_ms}", opt.current_lr()));
        rows.push(format!("{epoch},test,{test_loss},{test_corr},{},{wall_ms}", opt.current_lr()));
    }
    let metrics = out_dir.join("metrics.csv");
    write_csv(cfg, &metrics, "epoch,split,psp_mmd,rate_corr,lr,wall_ms", &rows)?;
    let model = out_dir.join("model.json");
    save_model_with_meta(&student, &model, cfg)?;
    let (final_loss, final_corr) = mmd_eval(&student, &test_pairs, &root.child(0xFF))?;
    let summary = write_summary(
        cfg,
        out_dir,
        json!({
            "final_test_psp_mmd": final_loss,
            "final_test_rate_corr": final_corr,
            "epochs": f.epochs,
        }),
    )?;
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        summary,
        files: vec![metrics, model],
    })
}

/// Dispatch one configured task, writing all artifacts under `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let out_dir = cfg.out_dir.clone();
    fs::create_dir_all(&out_dir)?;
    match cfg.task {
        TaskKind::Train => run_train(cfg, &out_dir),
        TaskKind::Eval => run_eval(cfg, &out_dir),
        TaskKind::Perturb => run_perturb(cfg, &out_dir),
        TaskKind::Stability => run_stability(cfg, &out_dir),
        TaskKind::Coding => run_coding(cfg, &out_dir),
        TaskKind::FitSpikes => run_fit_spikes(cfg, &out_dir),
        TaskKind::GradCheck => run_grad_check(cfg, &out_dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::SyntheticTaskSpec;

    fn base_config(task: TaskKind, out: &Path) -> ExperimentConfig {
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&format!(r#"{{"task": "{task}"}}"#)).unwrap();
        cfg.out_dir = out.to_path_buf();
        cfg.dataset = SyntheticTaskSpec {
            n_classes: 2,
            input_dim: 12,
            t_steps: 4,
            n_train: 24,
            n_test: 12,
            ..Default::default()
        };
        cfg.network.hidden_dims = vec![6];
        cfg.optimizer.epochs = 2;
        cfg.optimizer.batch_size = 8;
        cfg
    }

    #[test]
    fn grad_check_writes_passing_verdict() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_config(TaskKind::GradCheck, dir.path());
        cfg.grad_check.n_samples = 4000;
        let artifacts = run(&cfg).unwrap();
        let verdict: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join("verdict.json")).unwrap(),
        )
        .unwrap();
        assert!(verdict["max_abs_bias_over_se"].as_f64().unwrap() < 3.0);
        assert_eq!(verdict["pass"], true);
        assert!(artifacts.summary.exists());
    }

    #[test]
    fn stability_rows_satisfy_containment() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_config(TaskKind::Stability, dir.path());
        cfg.stability.t_final = 20.0;
        cfg.stability.n_paths = 48;
        cfg.stability.a1_grid = vec![-2.0];
        cfg.stability.a2_grid = vec![0.0, 1.0];
        cfg.stability.b2_grid = vec![0.0, 0.5];
        run(&cfg).unwrap();
        let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let mut checked = 0;
        for line in text.lines().skip(2) {
            let cols: Vec<&str> = line.split(',').collect();
            let lb: f64 = cols[4].parse().unwrap();
            let ub: f64 = cols[5].parse().unwrap();
            let le: f64 = cols[6].parse().unwrap();
            assert!(le >= lb - 0.15 && le <= ub + 0.15, "{line}");
            checked += 1;
        }
        assert_eq!(checked, 4);
    }

    #[test]
    fn train_writes_metrics_model_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_config(TaskKind::Train, dir.path());
        let artifacts = run(&cfg).unwrap();
        assert!(dir.path().join("metrics.csv").exists());
        assert!(dir.path().join("model.json").exists());
        assert!(artifacts.summary.exists());
        let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(text.starts_with(&format!("# seed={}", cfg.seed)));
        let model = load_model(&dir.path().join("model.json")).unwrap();
        assert_eq!(model.in_dim(), 12);
    }

    #[test]
    fn rerun_reproduces_metrics_modulo_wall_time() {
        let strip_wall = |text: &str| -> Vec<String> {
            text.lines()
                .map(|l| {
                    let mut cols: Vec<&str> = l.split(',').collect();
                    if cols.len() == 6 && !l.starts_with('#') && !l.starts_with("epoch") {
                        cols.pop();
                    }
                    cols.join(",")
                })
                .collect()
        };
        let dir1 = tempfile::tempdir().unwrap();
        let cfg1 = base_config(TaskKind::Train, dir1.path());
        run(&cfg1).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut cfg2 = base_config(TaskKind::Train, dir2.path());
        cfg2.out_dir = dir2.path().to_path_buf();
        run(&cfg2).unwrap();
        let m1 = strip_wall(&fs::read_to_string(dir1.path().join("metrics.csv")).unwrap());
        let m2 = strip_wall(&fs::read_to_string(dir2.path().join("metrics.csv")).unwrap());
        // identical apart from the config hash (out_dir differs) and wall clock
        assert_eq!(m1[1..], m2[1..]);
        let n1 = load_model(&dir1.path().join("model.json")).unwrap();
        let n2 = load_model(&dir2.path().join("model.json")).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn fit_spikes_reduces_psp_mmd() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_config(TaskKind::FitSpikes, dir.path());
        cfg.fit.epochs = 8;
        cfg.fit.n_train = 16;
        cfg.fit.n_test = 8;
        cfg.fit.input_dim = 8;
        cfg.fit.target_neurons = 4;
        cfg.fit.t_steps = 12;
        run(&cfg).unwrap();
        let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let losses: Vec<f64> = text
            .lines()
            .filter(|l| l.contains(",train,"))
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "psp-mmd did not decrease: {losses:?}"
        );
    }
}
