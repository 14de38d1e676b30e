use std::path::{Path, PathBuf};

use super::epoch::{train_epoch_pipeline, train_epoch_sequential};
use super::eval::forward_dataset;
use super::metrics::{append_metrics, MetricsRecord};
use super::{RunMode, TrainSettings};
use crate::data::{save_checkpoint, Checkpoint, DataSplits, Phase, TrainConfig};
use crate::error::{Error, Result};
use crate::hierarchy::{build_tree, extract_prototypes, load_hierarchy, save_hierarchy, HierTree, Hierarchy};
use crate::inference::{linear_probe, per_layer_accuracy, sip_select, ProbeConfig};
use crate::layers::{build_network, Network};

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const MODEL_CHECKPOINT: &str = "model.ckpt";
pub const HIERARCHY_FILE: &str = "hierarchy.txt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Training settings of one phase of a configured run.
pub fn phase_settings(cfg: &TrainConfig, phase: Phase) -> TrainSettings {
    let (epochs, lambda) = match phase {
        Phase::Pretrain => (
            cfg.pretrain_epochs(),
            if cfg.objective.pretrain_contrastive { cfg.objective.lambda } else { 0.0 },
        ),
        Phase::Train => (cfg.training.epochs, cfg.objective.lambda),
    };
    TrainSettings {
        phase,
        seed: cfg.seed,
        batch_size: cfg.training.batch_size,
        lambda,
        reduction: cfg.objective.reduction,
        schedule: cfg.schedule(epochs),
        augment: cfg.augment,
        active_layers: None,
    }
}

/// A freshly initialized network for `phase` under `hierarchy`.
pub fn fresh_checkpoint(
    cfg: &TrainConfig,
    phase: Phase,
    hierarchy: Hierarchy,
    in_channels: usize,
) -> Result<Checkpoint> {
    let spec = cfg.network_spec(in_channels);
    spec.validate()?;
    if hierarchy.num_layers() != spec.num_layers() {
        return Err(Error::Config(format!(
            "hierarchy maps {} layers, network has {}",
            hierarchy.num_layers(),
            spec.num_layers()
        )));
    }
    let network: Network<f32> = build_network(&spec, hierarchy.mapping(), cfg.optimizer, cfg.seed)?;
    Ok(Checkpoint {
        phase,
        network,
        hierarchy,
        epochs_done: 0,
        seed: cfg.seed,
        config: cfg.clone(),
        sip: None,
    })
}

/// Trains `ckpt` from its completed epoch count up to `until` epochs of its
/// phase. After every epoch the validation set is scored, the layer
/// interval is reselected and `observer` sees the record and checkpoint.
pub fn run_phase(
    ckpt: &mut Checkpoint,
    data: &DataSplits,
    until: usize,
    mode: RunMode,
    observer: &mut dyn FnMut(&MetricsRecord, &Checkpoint) -> Result<()>,
) -> Result<Vec<MetricsRecord>> {
    let settings = phase_settings(&ckpt.config, ckpt.phase);
    if until > settings.schedule.total_epochs {
        return Err(Error::Config(format!(
            "cannot train to epoch {until} of a {}-epoch schedule",
            settings.schedule.total_epochs
        )));
    }
    let mut records = Vec::new();
    for epoch in ckpt.epochs_done..until {
        let mut rec = match mode {
            RunMode::Sequential => {
                train_epoch_sequential(&mut ckpt.network, &data.train, &ckpt.hierarchy, &settings, epoch)?
            }
            RunMode::Pipeline { queue_capacity } => train_epoch_pipeline(
                &mut ckpt.network,
                &data.train,
                &ckpt.hierarchy,
                &settings,
                epoch,
                queue_capacity,
            )?,
        };
        let val = forward_dataset(&ckpt.network, &data.val)?;
        let acc = per_layer_accuracy(&val.traces, data.val.labels(), &ckpt.hierarchy)?;
        let sip = sip_select(&val.traces, data.val.labels())?;
        rec.val_layer_accuracy = acc.fine.data().to_vec();
        rec.val_sip_accuracy = Some(sip.val_accuracy);
        ckpt.sip = Some(sip);
        ckpt.epochs_done = epoch + 1;
        observer(&rec, ckpt)?;
        records.push(rec);
    }
    Ok(records)
}

/// Class tree derived from a trained network: a linear probe on the last
/// layer's pooled decoupled features supplies one prototype per class.
#[derive(Debug, Clone)]
pub struct DerivedHierarchy {
    pub tree: HierTree,
    pub hierarchy: Hierarchy,
    /// Held-out accuracy of the probe whose weights gave the prototypes.
    pub probe_accuracy: f64,
}

pub fn derive_hierarchy(ckpt: &Checkpoint, data: &DataSplits) -> Result<DerivedHierarchy> {
    let net = &ckpt.network;
    let k = net.spec.num_classes;
    let train = forward_dataset(net, &data.train)?;
    let val = forward_dataset(net, &data.val)?;
    let probe_cfg = ProbeConfig {
        seed: ckpt.seed,
        ..ckpt.config.probe
    };
    let (probe, probe_accuracy) = linear_probe(
        (&train.final_decoupled, data.train.labels()),
        (&val.final_decoupled, data.val.labels()),
        k,
        &probe_cfg,
    )?;
    let tree = build_tree(&extract_prototypes(&probe.weights)?)?;
    let hierarchy = Hierarchy::new(&tree, ckpt.config.hierarchy.strategy, net.num_layers())?;
    Ok(DerivedHierarchy {
        tree,
        hierarchy,
        probe_accuracy,
    })
}

/// How a run executes and where it writes.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub mode: RunMode,
    /// Directory for checkpoints, the hierarchy file and the metrics log;
    /// `None` keeps everything in memory.
    pub output_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of starting over.
    pub resume: Option<Checkpoint>,
    /// Stop after the flat pretraining phase.
    pub pretrain_only: bool,
    /// Print one progress line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Final checkpoint: the hierarchical model, or the pretrained one when
    /// the run stopped after pretraining.
    pub checkpoint: Checkpoint,
    pub pretrained: Option<Checkpoint>,
    pub derived: Option<DerivedHierarchy>,
    pub metrics: Vec<MetricsRecord>,
}

fn sink<'a>(opts: &'a RunOptions, ckpt_name: &'a str) -> impl FnMut(&MetricsRecord, &Checkpoint) -> Result<()> + 'a {
    move |rec, ckpt| {
        if opts.verbose {
            let last = rec.layers.last().map_or(0.0, |m| m.train_accuracy);
            eprintln!(
                "{:?} epoch {}: lr {:.3e} tau {:.3} last-layer train acc {:.4} val SIP acc {:.4} ({:.1}s)",
                rec.phase,
                rec.epoch,
                rec.lr,
                rec.tau,
                last,
                rec.val_sip_accuracy.unwrap_or(f64::NAN),
                rec.seconds
            );
        }
        if let Some(dir) = &opts.output_dir {
            append_metrics(&dir.join(METRICS_FILE), rec)?;
            save_checkpoint(&dir.join(ckpt_name), ckpt)?;
        }
        Ok(())
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Two-stage training: flat pretraining, hierarchy construction from the
/// pretrained network, then training from scratch under that hierarchy,
/// ending with layer-interval selection on the validation set. A configured
/// hierarchy file skips the first two steps.
pub fn run_two_stage(cfg: &TrainConfig, data: &DataSplits, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    if let Some(dir) = &opts.output_dir {
        prepare_dir(dir)?;
        let log = dir.join(METRICS_FILE);
        if opts.resume.is_none() && log.exists() {
            std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
    }
    let in_channels = data.train.image_shape()[0];
    let layers = cfg.network_spec(in_channels).num_layers();
    let mut metrics = Vec::new();

    let mut stage2 = match &opts.resume {
        Some(ck) if ck.phase == Phase::Train => Some(ck.clone()),
        _ => None,
    };
    let mut pretrained = None;
    let mut derived = None;

    if stage2.is_none() {
        let explicit = match (&opts.resume, &cfg.hierarchy.path) {
            (None, Some(path)) => Some(load_hierarchy(path)?.with_mapping(cfg.hierarchy.strategy, layers)?),
            _ => None,
        };
        let hierarchy = match explicit {
            Some(h) => h,
            None => {
                let mut ck = match &opts.resume {
                    Some(ck) => ck.clone(),
                    None => fresh_checkpoint(cfg, Phase::Pretrain, Hierarchy::flat(cfg.model.num_classes, layers)?, in_channels)?,
                };
                let until = ck.config.pretrain_epochs();
                metrics.extend(run_phase(&mut ck, data, until, opts.mode, &mut sink(opts, PRETRAIN_CHECKPOINT))?);
                if opts.pretrain_only {
                    return Ok(RunOutcome {
                        checkpoint: ck,
                        pretrained: None,
                        derived: None,
                        metrics,
                    });
                }
                let d = derive_hierarchy(&ck, data)?;
                if let Some(dir) = &opts.output_dir {
                    save_hierarchy(&d.hierarchy, &dir.join(HIERARCHY_FILE))?;
                }
                let h = d.hierarchy.clone();
                pretrained = Some(ck);
                derived = Some(d);
                h
            }
        };
        stage2 = Some(fresh_checkpoint(cfg, Phase::Train, hierarchy, in_channels)?);
    }

    let mut ck = stage2.expect("stage two checkpoint prepared above");
    let until = ck.config.training.epochs;
    metrics.extend(run_phase(&mut ck, data, until, opts.mode, &mut sink(opts, MODEL_CHECKPOINT))?);
    if ck.sip.is_none() {
        let val = forward_dataset(&ck.network, &data.val)?;
        ck.sip = Some(sip_select(&val.traces, data.val.labels())?);
    }
    Ok(RunOutcome {
        checkpoint: ck,
        pretrained,
        derived,
        metrics,
    })
}
