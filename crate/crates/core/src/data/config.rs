//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 1
//!
//! [data]
//! kind = "mnist"            # mnist | cifar10 | synthetic
//! dir = "data/mnist"
//! train_subset = 10000      # optional
//!
//! [model]
//! widths = [20]             # one entry per residual block
//! num_classes = 10
//! goodness_mode = "mean"    # mean | sum_squares
//!
//! [objective]
//! lambda = 1.0
//!
//! [schedule]                # lr_init, lr_min, tau_start, tau_warm, tau_end, warmup_epochs
//! lr_init = 0.01
//!
//! [training]
//! epochs = 5
//! batch_size = 128
//!
//! [augment]
//! family = "digits"         # none | digits | natural
//!
//! [hierarchy]
//! path = "runs/mnist/hierarchy.txt"   # optional; skips pretraining
//! strategy = "balanced"     # balanced | incremental | decremental
//!
//! [execution]
//! mode = "pipeline"         # sequential | pipeline
//! queue_capacity = 4
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::augment::AugmentConfig;
use super::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::hierarchy::MappingStrategy;
use crate::inference::ProbeConfig;
use crate::layers::{GoodnessMode, NetworkSpec};
use crate::numerics::{AdamConfig, ScheduleConfig};
use crate::objectives::SupconReduction;
use crate::trainer::RunMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Mnist,
    Cifar10,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Directory holding the dataset files; relative paths resolve against
    /// the config file's directory.
    pub dir: PathBuf,
    /// Keep only the first `n` training images (before the validation split).
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub val_fraction: f64,
    pub synthetic: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::Mnist,
            dir: PathBuf::from("data/mnist"),
            train_subset: None,
            test_subset: None,
            val_fraction: 0.1,
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub num_classes: usize,
    pub goodness_mode: GoodnessMode,
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: vec![40, 80, 160, 320],
            num_classes: 10,
            goodness_mode: GoodnessMode::Mean,
            embed_dim: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub reduction: SupconReduction,
    /// Whether the pretraining stage keeps the contrastive term.
    pub pretrain_contrastive: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 1.0,
            reduction: SupconReduction::Sum,
            pretrain_contrastive: true,
        }
    }
}

/// Overrides of the default schedule; unset keys keep the defaults for the
/// configured epoch count.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub lr_init: Option<f64>,
    pub lr_min: Option<f64>,
    pub tau_start: Option<f64>,
    pub tau_warm: Option<f64>,
    pub tau_end: Option<f64>,
    pub warmup_epochs: Option<usize>,
}

impl ScheduleOverrides {
    pub fn resolve(&self, epochs: usize) -> ScheduleConfig {
        let base = ScheduleConfig::for_epochs(epochs);
        ScheduleConfig {
            lr_init: self.lr_init.unwrap_or(base.lr_init),
            lr_min: self.lr_min.unwrap_or(base.lr_min),
            tau_start: self.tau_start.unwrap_or(base.tau_start),
            tau_warm: self.tau_warm.unwrap_or(base.tau_warm),
            tau_end: self.tau_end.unwrap_or(base.tau_end),
            warmup_epochs: self.warmup_epochs.unwrap_or(base.warmup_epochs),
            total_epochs: epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Epochs of the flat pretraining stage; defaults to `epochs`.
    pub pretrain_epochs: Option<usize>,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 150,
            pretrain_epochs: None,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    /// Precomputed hierarchy file; when set, pretraining is skipped.
    pub path: Option<PathBuf>,
    pub strategy: MappingStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Sequential,
    Pipeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub mode: ExecMode,
    pub queue_capacity: usize,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            mode: ExecMode::Sequential,
            queue_capacity: 4,
        }
    }
}

impl ExecutionConfig {
    pub fn run_mode(&self) -> RunMode {
        match self.mode {
            ExecMode::Sequential => RunMode::Sequential,
            ExecMode::Pipeline => RunMode::Pipeline {
                queue_capacity: self.queue_capacity,
            },
        }
    }
}

/// Complete description of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Directory for checkpoints, hierarchy and metrics; relative paths
    /// resolve against the config file's directory.
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub schedule: ScheduleOverrides,
    pub optimizer: AdamConfig,
    pub training: TrainingConfig,
    pub augment: AugmentConfig,
    pub hierarchy: HierarchyConfig,
    pub execution: ExecutionConfig,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            objective: ObjectiveConfig::default(),
            schedule: ScheduleOverrides::default(),
            optimizer: AdamConfig::default(),
            training: TrainingConfig::default(),
            augment: AugmentConfig::default(),
            hierarchy: HierarchyConfig::default(),
            execution: ExecutionConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Validation {
                path: origin.to_path_buf(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.dir);
        if let Some(p) = self.hierarchy.path.as_mut() {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn network_spec(&self, in_channels: usize) -> NetworkSpec {
        let mut spec = NetworkSpec::new(&self.model.widths, self.model.num_classes, in_channels);
        spec.goodness_mode = self.model.goodness_mode;
        spec.embed_dim = self.model.embed_dim;
        spec
    }

    pub fn schedule(&self, epochs: usize) -> ScheduleConfig {
        self.schedule.resolve(epochs)
    }

    pub fn pretrain_epochs(&self) -> usize {
        self.training.pretrain_epochs.unwrap_or(self.training.epochs)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.training.epochs == 0 || self.pretrain_epochs() == 0 {
            return cfg("epochs must be positive".into());
        }
        if self.training.batch_size == 0 {
            return cfg("batch_size must be positive".into());
        }
        if !(self.objective.lambda >= 0.0) {
            return cfg(format!("lambda must be non-negative, got {}", self.objective.lambda));
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return cfg(format!("val_fraction must lie in (0, 1), got {}", self.data.val_fraction));
        }
        if self.execution.queue_capacity == 0 {
            return cfg("queue_capacity must be at least 1".into());
        }
        self.network_spec(1).validate()?;
        let wrap = |e: Error| Error::Config(e.to_string());
        self.schedule(self.training.epochs).validate().map_err(wrap)?;
        self.schedule(self.pretrain_epochs()).validate().map_err(wrap)?;
        self.optimizer.validate().map_err(wrap)?;
        self.augment.validate().map_err(wrap)?;
        if self.probe.epochs == 0 || self.probe.batch_size == 0 || !(self.probe.lr > 0.0) {
            return cfg("probe needs positive epochs, batch size and learning rate".into());
        }
        Ok(())
    }
}
