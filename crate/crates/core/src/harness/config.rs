//! Experiment configuration files (flat JSON, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gan::{GanConfig, TrainConfig};
use crate::solver::{LossNorm, SolverConfig, SurrogateKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Deblur,
    Edgemap,
    Bss,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Deblur => "deblur",
            Scenario::Edgemap => "edgemap",
            Scenario::Bss => "bss",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "deblur" => Ok(Scenario::Deblur),
            "edgemap" => Ok(Scenario::Edgemap),
            "bss" => Ok(Scenario::Bss),
            other => Err(Error::Config(format!("unknown scenario \"{other}\" (expected deblur, edgemap or bss)"))),
        }
    }

    pub fn default_baselines(self) -> Vec<String> {
        let names: &[&str] = match self {
            Scenario::Deblur => &["pgd_no_forward", "pgd_known_forward", "wiener"],
            Scenario::Edgemap => &["pgd_no_forward", "pgd_known_forward"],
            Scenario::Bss => &["naive_additive", "fastica"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// Where ground-truth sources come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSource {
    /// Held-out dataset images.
    #[default]
    Dataset,
    /// Samples of the trained generator.
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub seed: u64,
    pub output: PathBuf,
    pub checkpoint: PathBuf,
    /// IDX archive; synthetic shapes are generated when absent.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "defaults::dataset_size")]
    pub dataset_size: usize,
    #[serde(default = "defaults::yes")]
    pub downsample: bool,
    /// Existing observation directory to use instead of synthesizing.
    #[serde(default)]
    pub observations: Option<PathBuf>,
    #[serde(default)]
    pub truth: TruthSource,

    #[serde(default = "defaults::n")]
    pub n: usize,
    /// 0 picks the scenario default: 3 for bss, 1 otherwise.
    #[serde(default)]
    pub sources: usize,
    #[serde(default = "defaults::n_obs")]
    pub n_obs: usize,
    #[serde(default = "defaults::blur_size")]
    pub blur_size: usize,
    #[serde(default = "defaults::blur_sigma")]
    pub blur_sigma: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "defaults::k_reg")]
    pub k_reg: f64,

    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::steps")]
    pub surrogate_steps: usize,
    #[serde(default = "defaults::steps")]
    pub latent_steps: usize,
    #[serde(default = "defaults::lr_theta")]
    pub lr_theta: f64,
    #[serde(default = "defaults::lr_z")]
    pub lr_z: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::clip_lo")]
    pub clip_lo: f64,
    #[serde(default = "defaults::clip_hi")]
    pub clip_hi: f64,
    #[serde(default)]
    pub loss_norm: LossNorm,
    #[serde(default)]
    pub surrogate: Option<SurrogateKind>,
    #[serde(default)]
    pub early_stop: bool,
    /// Baseline methods run by `run`; scenario defaults when absent.
    #[serde(default)]
    pub baselines: Option<Vec<String>>,

    #[serde(default = "defaults::latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "defaults::one")]
    pub channels: usize,
    #[serde(default = "defaults::side")]
    pub height: usize,
    #[serde(default = "defaults::side")]
    pub width: usize,
    #[serde(default = "defaults::gan_epochs")]
    pub gan_epochs: usize,
    #[serde(default = "defaults::gan_batch")]
    pub gan_batch: usize,
    #[serde(default = "defaults::gan_lr_g")]
    pub gan_lr_g: f64,
    #[serde(default = "defaults::gan_lr_d")]
    pub gan_lr_d: f64,
    #[serde(default = "defaults::gan_real_label")]
    pub gan_real_label: f64,

    #[serde(default = "defaults::one")]
    pub trials: usize,
    /// Write wall-clock runtimes into the CSV (otherwise 0, keeping reruns identical).
    #[serde(default)]
    pub record_timings: bool,
}

mod defaults {
    use crate::gan::TrainConfig;

    pub fn yes() -> bool {
        true
    }
    pub fn one() -> usize {
        1
    }
    pub fn dataset_size() -> usize {
        2000
    }
    pub fn n() -> usize {
        25
    }
    pub fn n_obs() -> usize {
        4
    }
    pub fn blur_size() -> usize {
        7
    }
    pub fn blur_sigma() -> f64 {
        1.5
    }
    pub fn k_reg() -> f64 {
        1e-2
    }
    pub fn epochs() -> usize {
        100
    }
    pub fn steps() -> usize {
        50
    }
    pub fn lr_theta() -> f64 {
        4e-3
    }
    pub fn lr_z() -> f64 {
        3e-4
    }
    pub fn alpha() -> f64 {
        1e-4
    }
    pub fn clip_lo() -> f64 {
        -1.0
    }
    pub fn clip_hi() -> f64 {
        1.0
    }
    pub fn latent_dim() -> usize {
        100
    }
    pub fn side() -> usize {
        16
    }
    pub fn gan_epochs() -> usize {
        TrainConfig::default().epochs
    }
    pub fn gan_batch() -> usize {
        TrainConfig::default().batch
    }
    pub fn gan_lr_g() -> f64 {
        TrainConfig::default().lr_g
    }
    pub fn gan_lr_d() -> f64 {
        TrainConfig::default().lr_d
    }
    pub fn gan_real_label() -> f64 {
        TrainConfig::default().real_label
    }
}

impl ExperimentConfig {
    /// Minimal configuration; every other key takes its default.
    pub fn new(scenario: Scenario, seed: u64, output: impl Into<PathBuf>, checkpoint: impl Into<PathBuf>) -> Self {
        let text = serde_json::json!({
            "scenario": scenario.name(),
            "seed": seed,
            "output": output.into(),
            "checkpoint": checkpoint.into(),
        });
        let mut cfg: Self = serde_json::from_value(text).expect("defaults deserialize");
        cfg.fill_scenario_defaults();
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.fill_scenario_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    fn fill_scenario_defaults(&mut self) {
        if self.sources == 0 {
            self.sources = if matches!(self.scenario(), Ok(Scenario::Bss)) { 3 } else { 1 };
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::parse(&self.scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let scenario = self.scenario()?;
        self.solver_config()?.validate()?;
        if self.n == 0 || self.trials == 0 {
            return Err(Error::Config("n and trials must be at least 1".into()));
        }
        if scenario == Scenario::Bss && !(1..=5).contains(&self.sources) {
            return Err(Error::Config(format!("bss supports 1 to 5 sources, got {}", self.sources)));
        }
        if self.noise_sigma < 0.0 || self.k_reg < 0.0 {
            return Err(Error::Config("noise_sigma and k_reg must be non-negative".into()));
        }
        for b in self.baselines() {
            if !crate::harness::experiment::BASELINES.contains(&b.as_str()) {
                return Err(Error::Config(format!("unknown baseline \"{b}\"")));
            }
        }
        Ok(())
    }

    pub fn baselines(&self) -> Vec<String> {
        match (&self.baselines, self.scenario()) {
            (Some(b), _) => b.clone(),
            (None, Ok(s)) => s.default_baselines(),
            (None, Err(_)) => Vec::new(),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let scenario = self.scenario()?;
        let surrogate = self.surrogate.unwrap_or(match scenario {
            Scenario::Bss => SurrogateKind::Mix,
            _ => SurrogateKind::Conv,
        });
        Ok(SolverConfig {
            epochs: self.epochs,
            surrogate_steps: self.surrogate_steps,
            latent_steps: self.latent_steps,
            lr_theta: self.lr_theta,
            lr_z: self.lr_z,
            alpha: self.alpha,
            clip_lo: self.clip_lo,
            clip_hi: self.clip_hi,
            sources: if scenario == Scenario::Bss { self.sources } else { 1 },
            loss_norm: self.loss_norm,
            surrogate,
            early_stop: self.early_stop,
        })
    }

    pub fn gan_config(&self) -> GanConfig {
        GanConfig {
            latent_dim: self.latent_dim,
            channels: self.channels,
            height: self.height,
            width: self.width,
            ..GanConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.gan_epochs,
            batch: self.gan_batch,
            lr_g: self.gan_lr_g,
            lr_d: self.gan_lr_d,
            real_label: self.gan_real_label,
            ..TrainConfig::default()
        }
    }
}
