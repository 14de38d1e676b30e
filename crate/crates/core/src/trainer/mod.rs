//! Training orchestration: epochs in sequential or pipelined execution,
//! the two-stage run, evaluation and metrics logging.
//!
//! In both execution modes every layer takes one local step per batch,
//! as soon as its input arrives, and forwards the features it computed
//! before that step. Layer `l` therefore sees exactly the same inputs
//! whether the layers run one after another or as concurrent stages, which
//! makes the two modes bit-identical.

mod epoch;
mod eval;
mod metrics;
mod run;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, Phase};
use crate::error::{Error, Result};
use crate::numerics::ScheduleConfig;
use crate::objectives::SupconReduction;

pub use epoch::{epoch_batches, train_epoch_pipeline, train_epoch_sequential};
pub use eval::{evaluate, forward_dataset, probe_accuracies, EvalReport, ForwardSummary, REPORT_HEADER};
pub use metrics::{append_metrics, parse_metrics, read_metrics, LayerMetrics, MetricsRecord, METRICS_HEADER};
pub use run::{
    derive_hierarchy, fresh_checkpoint, phase_settings, run_phase, run_two_stage, DerivedHierarchy,
    RunOptions, RunOutcome, HIERARCHY_FILE, METRICS_FILE, MODEL_CHECKPOINT, PRETRAIN_CHECKPOINT,
};

/// How the layers of a network are scheduled within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RunMode {
    #[default]
    Sequential,
    /// One worker per layer, linked by queues holding up to
    /// `queue_capacity` batches.
    Pipeline { queue_capacity: usize },
}

/// Everything an epoch needs besides the network, data and hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub phase: Phase,
    pub seed: u64,
    pub batch_size: usize,
    /// Weight of the contrastive term.
    pub lambda: f64,
    pub reduction: SupconReduction,
    pub schedule: ScheduleConfig,
    pub augment: AugmentConfig,
    /// Train only the first `n` layers; later layers are neither run nor
    /// updated.
    pub active_layers: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            phase: Phase::Train,
            seed: 0,
            batch_size: 128,
            lambda: 1.0,
            reduction: SupconReduction::Sum,
            schedule: ScheduleConfig::default(),
            augment: AugmentConfig::default(),
            active_layers: None,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        self.schedule.validate()?;
        self.augment.validate()
    }
}
