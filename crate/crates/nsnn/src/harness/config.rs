//! Experiment configuration: one flat JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::learning::{OptMethod, Rule};
use crate::network::LossMode;
use crate::neuron::NoiseFamily;
use crate::perturb::AttackMethod;
use crate::stability::ErrorDiffusion;
use crate::{Error, Result};

use super::dataset::SyntheticTaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Train,
    Eval,
    Perturb,
    Stability,
    Coding,
    FitSpikes,
    GradCheck,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(TaskKind::Train),
            "eval" => Ok(TaskKind::Eval),
            "perturb" => Ok(TaskKind::Perturb),
            "stability" => Ok(TaskKind::Stability),
            "coding" => Ok(TaskKind::Coding),
            "fit_spikes" => Ok(TaskKind::FitSpikes),
            "grad_check" => Ok(TaskKind::GradCheck),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            TaskKind::Train => "train",
            TaskKind::Eval => "eval",
            TaskKind::Perturb => "perturb",
            TaskKind::Stability => "stability",
            TaskKind::Coding => "coding",
            TaskKind::FitSpikes => "fit_spikes",
            TaskKind::GradCheck => "grad_check",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_noise_family")]
    pub noise_family: NoiseFamily,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default = "default_loss_mode")]
    pub loss_mode: LossMode,
    /// Weight init: `N(0, (init_scale / sqrt(fan_in))^2)`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Initial bias on spiking layers; lifts membranes toward threshold.
    #[serde(default = "default_bias_init")]
    pub bias_init: f64,
}

fn default_hidden_dims() -> Vec<usize> {
    vec![24, 24]
}
fn default_noise_family() -> NoiseFamily {
    NoiseFamily::Gaussian
}
fn default_noise_scale() -> f64 {
    0.3
}
fn default_loss_mode() -> LossMode {
    LossMode::PerStepMean
}
fn default_init_scale() -> f64 {
    1.0
}
fn default_bias_init() -> f64 {
    0.5
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_dims: default_hidden_dims(),
            noise_family: default_noise_family(),
            noise_scale: default_noise_scale(),
            loss_mode: default_loss_mode(),
            init_scale: default_init_scale(),
            bias_init: default_bias_init(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(default = "default_method")]
    pub method: OptMethod,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_rule")]
    pub rule: Rule,
}

fn default_method() -> OptMethod {
    OptMethod::Adam
}
fn default_lr() -> f64 {
    3e-3
}
fn default_epochs() -> usize {
    40
}
fn default_batch() -> usize {
    64
}
fn default_rule() -> Rule {
    Rule::Ndl
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: default_method(),
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            rule: default_rule(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSettings {
    pub method: AttackMethod,
    /// Sweep intensities: gamma for FGSM/direct-opt, rho for EventDrop,
    /// beta for spike flips.
    #[serde(default = "default_intensities")]
    pub intensities: Vec<f64>,
    #[serde(default = "default_do_iters")]
    pub do_iters: usize,
    #[serde(default = "default_do_lr")]
    pub do_lr: f64,
    /// Independent seeds averaged in the sweep.
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    /// Stochastic presentations averaged (rate decoding) per prediction.
    #[serde(default = "default_eval_trials")]
    pub eval_trials: usize,
}

fn default_intensities() -> Vec<f64> {
    vec![0.01, 0.02, 0.04, 0.1]
}
fn default_do_iters() -> usize {
    30
}
fn default_do_lr() -> f64 {
    0.002
}
fn default_n_seeds() -> usize {
    5
}
fn default_eval_trials() -> usize {
    5
}

impl Default for AttackSettings {
    fn default() -> Self {
        AttackSettings {
            method: AttackMethod::SpikeFlip,
            intensities: default_intensities(),
            do_iters: default_do_iters(),
            do_lr: default_do_lr(),
            n_seeds: default_n_seeds(),
            eval_trials: default_eval_trials(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityConfig {
    #[serde(default = "default_a1_grid")]
    pub a1_grid: Vec<f64>,
    #[serde(default = "default_a2_grid")]
    pub a2_grid: Vec<f64>,
    #[serde(default = "default_b2_grid")]
    pub b2_grid: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_variant")]
    pub variant: ErrorDiffusion,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
}

fn default_a1_grid() -> Vec<f64> {
    vec![-2.0, -1.0]
}
fn default_a2_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}
fn default_b2_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5]
}
fn default_dt() -> f64 {
    1e-3
}
fn default_t_final() -> f64 {
    50.0
}
fn default_n_paths() -> usize {
    100
}
fn default_variant() -> ErrorDiffusion {
    ErrorDiffusion::WienerDw
}
fn default_burn_in() -> f64 {
    0.2
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            a1_grid: default_a1_grid(),
            a2_grid: default_a2_grid(),
            b2_grid: default_b2_grid(),
            dt: default_dt(),
            t_final: default_t_final(),
            n_paths: default_n_paths(),
            variant: default_variant(),
            burn_in: default_burn_in(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodingConfig {
    #[serde(default = "default_coding_samples")]
    pub n_samples: usize,
    #[serde(default = "default_coding_trials")]
    pub n_trials: usize,
    #[serde(default = "default_bootstrap")]
    pub n_bootstrap: usize,
}

fn default_coding_samples() -> usize {
    500
}
fn default_coding_trials() -> usize {
    8
}
fn default_bootstrap() -> usize {
    1000
}

impl Default for CodingConfig {
    fn default() -> Self {
        CodingConfig {
            n_samples: default_coding_samples(),
            n_trials: default_coding_trials(),
            n_bootstrap: default_bootstrap(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckConfig {
    #[serde(default = "default_gc_samples")]
    pub n_samples: usize,
    #[serde(default = "default_gc_steps")]
    pub t_steps: usize,
    #[serde(default)]
    pub target: usize,
}

fn default_gc_samples() -> usize {
    100_000
}
fn default_gc_steps() -> usize {
    2
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            n_samples: default_gc_samples(),
            t_steps: default_gc_steps(),
            target: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(default = "default_fit_epochs")]
    pub epochs: usize,
    #[serde(default = "default_fit_lr")]
    pub lr: f64,
    #[serde(default = "default_fit_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_fit_neurons")]
    pub target_neurons: usize,
    #[serde(default = "default_fit_t")]
    pub t_steps: usize,
    #[serde(default = "default_fit_train")]
    pub n_train: usize,
    #[serde(default = "default_fit_test")]
    pub n_test: usize,
    #[serde(default = "default_fit_tau")]
    pub psp_tau: f64,
    #[serde(default = "default_fit_noise")]
    pub noise_scale: f64,
}

fn default_fit_epochs() -> usize {
    40
}
fn default_fit_lr() -> f64 {
    5e-3
}
fn default_fit_input_dim() -> usize {
    16
}
fn default_fit_neurons() -> usize {
    8
}
fn default_fit_t() -> usize {
    20
}
fn default_fit_train() -> usize {
    48
}
fn default_fit_test() -> usize {
    16
}
fn default_fit_tau() -> f64 {
    2.0
}
fn default_fit_noise() -> f64 {
    0.2
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: default_fit_epochs(),
            lr: default_fit_lr(),
            input_dim: default_fit_input_dim(),
            target_neurons: default_fit_neurons(),
            t_steps: default_fit_t(),
            n_train: default_fit_train(),
            n_test: default_fit_test(),
            psp_tau: default_fit_tau(),
            noise_scale: default_fit_noise(),
        }
    }
}

/// Top-level experiment configuration (flat JSON document).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Optional model to load instead of training (eval/perturb/coding).
    #[serde(default)]
    pub model_in: Option<PathBuf>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub dataset: SyntheticTaskSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub attack: AttackSettings,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub coding: CodingConfig,
    #[serde(default)]
    pub grad_check: GradCheckConfig,
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_seed() -> u64 {
    42
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let scale = self.network.noise_scale;
        if self.network.noise_family != NoiseFamily::None
            && (scale.is_nan() || scale <= 0.0 || scale > 2.0)
        {
            return Err(Error::Config(format!(
                "noise_scale must lie in (0, 2], got {}",
                self.network.noise_scale
            )));
        }
        self.dataset.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        })?;
        if let Some(path) = &self.model_in {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "model_in {} does not exist",
                    path.display()
                )));
            }
        }
        if self.optimizer.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        // zero lr is allowed for no-op runs, negative is not
        if self.optimizer.lr < 0.0 {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        Ok(())
    }

    /// Stable hash of the full configuration, embedded in every artifact.
    pub fn sha256(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).unwrap_or_default();
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
