//! TOML experiment configuration. Every field has a default mirroring the toy
//! setup (random dataset, MLP 32×5, Adam 1e-4, batch 64, 1000 epochs, α = 1e-2).

use std::path::{Path, PathBuf};

use cpaseed_core::data::{self, Dataset, LabelRule};
use cpaseed_core::net::{build_mlp, build_residual, ActivationKind, AdamConfig, Init, NetSpec, Norm};
use cpaseed_core::seeding::PenaltyConfig;
use cpaseed_core::{CpaGraph, Rng};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid value at `{key}`: {message}")]
    Parse { path: PathBuf, key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Random,
    TwoMoons,
    GaussianQuantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetName,
    pub n: usize,
    pub seed: u64,
    /// Two moons only.
    pub noise: f64,
    /// Gaussian quantiles only.
    pub classes: usize,
    /// Random dataset only.
    pub labels: LabelRule,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: DatasetName::Random,
            n: 500,
            seed: 0,
            noise: 0.1,
            classes: 5,
            labels: LabelRule::Uniform,
            train_fraction: 0.8,
            split_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn generate(&self) -> Result<Dataset, ConfigError> {
        let ds = match self.name {
            DatasetName::Random => data::gen_random(self.n, self.seed, self.labels),
            DatasetName::TwoMoons => data::gen_two_moons(self.n, self.noise, self.seed),
            DatasetName::GaussianQuantiles => data::gen_gaussian_quantiles(self.n, self.classes, self.seed),
        };
        ds.map_err(|e| ConfigError::Invalid(format!("dataset: {e}")))
    }

    /// `(train, test)`.
    pub fn generate_split(&self) -> Result<(Dataset, Dataset), ConfigError> {
        data::split(&self.generate()?, self.train_fraction, self.split_seed)
            .map_err(|e| ConfigError::Invalid(format!("dataset: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub width: usize,
    /// Hidden layers of the MLP.
    pub depth: usize,
    /// Residual blocks.
    pub blocks: usize,
    pub norm: Norm,
    pub activation: Activation,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Mlp,
            width: 32,
            depth: 5,
            blocks: 2,
            norm: Norm::None,
            activation: Activation::Relu,
            leaky_slope: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn activation_kind(&self) -> ActivationKind {
        match self.activation {
            Activation::Relu => ActivationKind::Relu,
            Activation::LeakyRelu => ActivationKind::LeakyRelu { slope: self.leaky_slope },
        }
    }

    pub fn build(&self, classes: usize, rng: &mut Rng) -> Result<CpaGraph, ConfigError> {
        let spec =
            NetSpec { input_dim: 2, classes, norm: self.norm, activation: self.activation_kind(), init: Init::FanIn };
        let net = match self.arch {
            Arch::Mlp => build_mlp(&spec, self.width, self.depth, rng),
            Arch::Residual => build_residual(&spec, self.width, self.blocks, rng),
        };
        net.map_err(|e| ConfigError::Invalid(format!("model: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: u32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        OptimizerConfig {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 64,
            epochs: 1000,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Enumerate every this many epochs, plus epoch 0 and the final epoch.
    pub enumerate_every: u32,
    /// Record a metric row every this many epochs, plus epoch 0, the final
    /// epoch and every enumeration epoch.
    pub metric_every: u32,
    pub seeds: Vec<u64>,
    /// Write `atlas/epoch_NNNN.json` at every enumeration.
    pub dump_atlas: bool,
    /// Fill the `wallclock_s` column. Off by default so reruns are byte-identical.
    pub wallclock: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            enumerate_every: 50,
            metric_every: 1,
            seeds: vec![0, 1, 2],
            dump_atlas: false,
            wallclock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub penalty: PenaltyConfig,
    pub schedule: ScheduleConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { key, message, .. } => ConfigError::Parse { path: path.to_path_buf(), key, message },
            other => other,
        })
    }

    /// Parses and validates; parse errors name the offending key path.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            key: e.path().to_string(),
            message: e.inner().message().trim().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.optimizer.epochs == 0 {
            return bad("optimizer.epochs must be at least 1");
        }
        if self.optimizer.batch_size == 0 {
            return bad("optimizer.batch_size must be at least 1");
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return bad("optimizer.lr must be positive");
        }
        if !(0.0..1.0).contains(&self.optimizer.beta1) || !(0.0..1.0).contains(&self.optimizer.beta2) {
            return bad("optimizer betas must lie in [0, 1)");
        }
        if !(self.optimizer.eps > 0.0) {
            return bad("optimizer.eps must be positive");
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return bad("dataset.train_fraction must lie in (0, 1)");
        }
        if self.model.width == 0 || (self.model.arch == Arch::Mlp && self.model.depth == 0) {
            return bad("model width and depth must be positive");
        }
        if self.model.arch == Arch::Residual && self.model.blocks == 0 {
            return bad("model.blocks must be positive");
        }
        if self.schedule.enumerate_every == 0 || self.schedule.metric_every == 0 {
            return bad("schedule intervals must be at least 1");
        }
        self.penalty.validate().map_err(|e| ConfigError::Invalid(format!("penalty: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpaseed_core::seeding::{AnnealMode, WeightMode};

    #[test]
    fn empty_config_is_the_toy_default() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.model.width, 32);
        assert_eq!(cfg.model.depth, 5);
        assert_eq!(cfg.optimizer.batch_size, 64);
        assert_eq!(cfg.optimizer.epochs, 1000);
        assert_eq!(cfg.penalty.alpha, 1e-2);
        assert_eq!(cfg.schedule.seeds, vec![0, 1, 2]);
    }

    #[test]
    fn roundtrips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.name = DatasetName::TwoMoons;
        cfg.model.arch = Arch::Residual;
        cfg.model.norm = Norm::BatchNorm;
        cfg.penalty.anneal_mode = AnnealMode::Constant;
        cfg.penalty.weight_mode = WeightMode::Uniform;
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_key_path() {
        let err = ExperimentConfig::parse("[optimizer]\nlr = \"fast\"\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Parse { key, .. } if key == "optimizer.lr"), "{err}");
        let err = ExperimentConfig::parse("[penalty]\nanneal_mode = \"cosine\"\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Parse { key, .. } if key == "penalty.anneal_mode"), "{err}");
        let err = ExperimentConfig::parse("[model]\nwidht = 3\n").unwrap_err();
        assert!(err.to_string().contains("widht"), "{err}");
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::parse("[optimizer]\nepochs = 0\n").is_err());
        assert!(ExperimentConfig::parse("[dataset]\ntrain_fraction = 1.0\n").is_err());
        assert!(ExperimentConfig::parse("[penalty]\nalpha = -1.0\n").is_err());
    }

    #[test]
    fn all_four_ablation_modes_are_expressible() {
        for (anneal, weights) in
            [("constant", "uniform"), ("constant", "decay"), ("linear", "uniform"), ("linear", "decay")]
        {
            let text = format!("[penalty]\nanneal_mode = \"{anneal}\"\nweight_mode = \"{weights}\"\n");
            ExperimentConfig::parse(&text).unwrap();
        }
    }
}
