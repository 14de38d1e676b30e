use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Learning-rate and contrastive-temperature schedules, both indexed by epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    pub total_epochs: usize,
    pub tau_start: f64,
    pub tau_warm: f64,
    pub tau_end: f64,
    /// Epochs of linear temperature warm-up. Zero skips the warm-up and
    /// starts the cosine decay at `tau_warm`.
    pub warmup_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            lr_init: 8e-2,
            lr_min: 2e-4,
            total_epochs: 1000,
            tau_start: 0.8,
            tau_warm: 0.2,
            tau_end: 0.08,
            warmup_epochs: 100,
        }
    }
}

impl ScheduleConfig {
    /// Default schedule shortened to `total_epochs`, with the warm-up
    /// kept at one tenth of the run (100 of 1000 epochs) but never above 100.
    pub fn for_epochs(total_epochs: usize) -> Self {
        ScheduleConfig {
            total_epochs,
            warmup_epochs: (total_epochs / 10).min(100),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(arg_err!("total_epochs must be positive"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_init) {
            return Err(arg_err!(
                "need 0 <= lr_min <= lr_init, got {} and {}",
                self.lr_min,
                self.lr_init
            ));
        }
        if !(self.tau_end > 0.0 && self.tau_end <= self.tau_warm && self.tau_warm <= self.tau_start)
        {
            return Err(arg_err!(
                "need 0 < tau_end <= tau_warm <= tau_start, got {} {} {}",
                self.tau_end,
                self.tau_warm,
                self.tau_start
            ));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(arg_err!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.warmup_epochs,
                self.total_epochs
            ));
        }
        Ok(())
    }

    fn check_epoch(&self, epoch: usize) -> Result<()> {
        self.validate()?;
        if epoch >= self.total_epochs {
            return Err(arg_err!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            ));
        }
        Ok(())
    }
}

/// Half-cosine from `1` at `t = 0` to `0` at `t = 1`.
fn cosine_weight(t: f64) -> f64 {
    0.5 * (1.0 + (PI * t).cos())
}

/// Cosine annealing from `lr_init` at epoch 0 to `lr_min` at the last epoch.
pub fn cosine_lr(epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.check_epoch(epoch)?;
    if cfg.total_epochs == 1 {
        return Ok(cfg.lr_init);
    }
    let t = epoch as f64 / (cfg.total_epochs - 1) as f64;
    Ok(cfg.lr_min + (cfg.lr_init - cfg.lr_min) * cosine_weight(t))
}

/// Linear warm-up from `tau_start` to `tau_warm`, then cosine decay to
/// `tau_end` at the last epoch.
pub fn tau_schedule(epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.check_epoch(epoch)?;
    let warm = cfg.warmup_epochs;
    if warm > 0 && epoch <= warm {
        let t = epoch as f64 / warm as f64;
        return Ok(cfg.tau_start + (cfg.tau_warm - cfg.tau_start) * t);
    }
    let last = cfg.total_epochs - 1;
    if last <= warm {
        return Ok(cfg.tau_warm);
    }
    let t = (epoch - warm) as f64 / (last - warm) as f64;
    Ok(cfg.tau_end + (cfg.tau_warm - cfg.tau_end) * cosine_weight(t))
}
