use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::metrics::{LayerMetrics, MetricsRecord};
use super::TrainSettings;
use crate::data::{augment_batch, Dataset, Phase};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::layers::{cw_conv_local_update, route, Carry, LayerRole, LayerState, LocalObjective, Network};
use crate::numerics::{cosine_lr, tau_schedule, Tensor};
use crate::objectives::SuperClassPartition;
use crate::rng::{stream, tag};

/// Sample order of one epoch, split into batches.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[tag::SHUFFLE, epoch as u64]));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn make_batch(
    data: &Dataset,
    ids: &[usize],
    settings: &TrainSettings,
    epoch: usize,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let (x, labels) = data.gather(ids)?;
    let x = augment_batch(&x, ids, &settings.augment, settings.seed, epoch)?;
    Ok((x, labels))
}

/// Checks that network, hierarchy and data agree before anything is updated.
fn check_consistency(network: &Network<f32>, data: &Dataset, hierarchy: &Hierarchy) -> Result<()> {
    let k = network.spec.num_classes;
    let problem = if hierarchy.num_classes() != k {
        Some(format!("hierarchy covers {} classes, network {k}", hierarchy.num_classes()))
    } else if data.num_classes() != k {
        Some(format!("dataset has {} classes, network {k}", data.num_classes()))
    } else if hierarchy.num_layers() != network.num_layers() {
        Some(format!(
            "hierarchy maps {} layers, network has {}",
            hierarchy.num_layers(),
            network.num_layers()
        ))
    } else if data.image_shape()[0] != network.spec.in_channels {
        Some(format!(
            "images have {} channels, network expects {}",
            data.image_shape()[0],
            network.spec.in_channels
        ))
    } else {
        None
    };
    match problem {
        Some(msg) => Err(Error::Config(msg)),
        None => network.validate(),
    }
}

/// Per-layer running sums over an epoch, added in batch order.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    hier: f64,
    con: f64,
    total: f64,
    correct: usize,
    samples: usize,
}

impl Tally {
    fn add(&mut self, r: &crate::layers::LossReport) {
        let n = r.samples as f64;
        self.hier += r.hier * n;
        self.con += r.con * n;
        self.total += r.total * n;
        self.correct += r.correct;
        self.samples += r.samples;
    }

    fn finish(&self) -> LayerMetrics {
        let n = self.samples.max(1) as f64;
        LayerMetrics {
            hier_loss: self.hier / n,
            con_loss: self.con / n,
            total_loss: self.total / n,
            train_accuracy: self.correct as f64 / n,
        }
    }
}

/// Settings shared by every step of one layer within an epoch.
struct StageContext<'a> {
    role: LayerRole,
    objective: LocalObjective<'a>,
    lr: f64,
}

/// One layer's work on one batch: local update from pre-update features,
/// then shortcut routing of those features toward the next layer.
fn stage_step(
    layer: &mut LayerState<f32>,
    ctx: &StageContext<'_>,
    x: &Tensor<f32>,
    labels: &[usize],
    carry: &mut Carry<f32>,
    tally: &mut Tally,
) -> Result<Tensor<f32>> {
    let (report, out) = cw_conv_local_update(layer, x, labels, &ctx.objective, ctx.lr)?;
    tally.add(&report);
    route(ctx.role, x, out.decoupled, carry)
}

struct EpochSetup<'a> {
    partitions: Vec<&'a SuperClassPartition>,
    active: usize,
    lr: f64,
    tau: f64,
    batches: Vec<Vec<usize>>,
}

fn setup<'a>(
    network: &Network<f32>,
    data: &Dataset,
    hierarchy: &'a Hierarchy,
    settings: &TrainSettings,
    epoch: usize,
) -> Result<EpochSetup<'a>> {
    check_consistency(network, data, hierarchy)?;
    settings.validate()?;
    let partitions = (0..network.num_layers())
        .map(|l| {
            hierarchy
                .partition_for_layer(l)
                .ok_or_else(|| Error::Config(format!("no hierarchy level for layer {l}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpochSetup {
        partitions,
        active: settings.active_layers.unwrap_or(usize::MAX).min(network.num_layers()),
        lr: cosine_lr(epoch, &settings.schedule)?,
        tau: tau_schedule(epoch, &settings.schedule)?,
        batches: epoch_batches(data.len(), settings.batch_size, settings.seed, epoch),
    })
}

fn context<'a>(s: &EpochSetup<'a>, settings: &TrainSettings, role: LayerRole, layer: usize) -> StageContext<'a> {
    StageContext {
        role,
        objective: LocalObjective {
            partition: s.partitions[layer],
            lambda: settings.lambda,
            tau: s.tau,
            reduction: settings.reduction,
        },
        lr: s.lr,
    }
}

fn record(phase: Phase, epoch: usize, s: &EpochSetup<'_>, tallies: &[Tally], started: Instant) -> MetricsRecord {
    MetricsRecord {
        phase,
        epoch,
        lr: s.lr,
        tau: s.tau,
        seconds: started.elapsed().as_secs_f64(),
        layers: tallies.iter().map(Tally::finish).collect(),
        val_layer_accuracy: Vec::new(),
        val_sip_accuracy: None,
    }
}

/// One epoch with layers updated one after another on each batch.
pub fn train_epoch_sequential(
    network: &mut Network<f32>,
    data: &Dataset,
    hierarchy: &Hierarchy,
    settings: &TrainSettings,
    epoch: usize,
) -> Result<MetricsRecord> {
    let started = Instant::now();
    let s = setup(network, data, hierarchy, settings, epoch)?;
    let mut tallies = vec![Tally::default(); s.active];
    for ids in &s.batches {
        let (mut x, labels) = make_batch(data, ids, settings, epoch)?;
        let mut carry = Carry::default();
        let layers = network.layers.iter_mut().zip(&network.roles).take(s.active);
        for (l, (layer, &role)) in layers.enumerate() {
            let ctx = context(&s, settings, role, l);
            x = stage_step(layer, &ctx, &x, &labels, &mut carry, &mut tallies[l])?;
        }
    }
    Ok(record(settings.phase, epoch, &s, &tallies, started))
}

/// Work item passed between pipeline stages.
struct Message {
    x: Tensor<f32>,
    labels: Arc<Vec<usize>>,
    carry: Carry<f32>,
}

enum StageEnd {
    Finished(Tally),
    /// Downstream hung up after failing; this stage has nothing to report.
    Abandoned,
}

fn run_stage(
    layer: &mut LayerState<f32>,
    ctx: StageContext<'_>,
    inbox: Receiver<Message>,
    outbox: Option<SyncSender<Message>>,
) -> Result<StageEnd> {
    let mut tally = Tally::default();
    for mut msg in inbox {
        let next = stage_step(layer, &ctx, &msg.x, &msg.labels, &mut msg.carry, &mut tally)?;
        if let Some(tx) = &outbox {
            let forward = Message {
                x: next,
                labels: msg.labels,
                carry: msg.carry,
            };
            if tx.send(forward).is_err() {
                return Ok(StageEnd::Abandoned);
            }
        }
    }
    Ok(StageEnd::Finished(tally))
}

/// One epoch with every layer running as its own worker thread, fed
/// through bounded FIFO queues of `queue_capacity` batches. Produces the
/// same parameters and metrics as [`train_epoch_sequential`], bit for bit.
pub fn train_epoch_pipeline(
    network: &mut Network<f32>,
    data: &Dataset,
    hierarchy: &Hierarchy,
    settings: &TrainSettings,
    epoch: usize,
    queue_capacity: usize,
) -> Result<MetricsRecord> {
    if queue_capacity == 0 {
        return Err(Error::Config("queue_capacity must be at least 1".into()));
    }
    let started = Instant::now();
    let s = setup(network, data, hierarchy, settings, epoch)?;
    if s.active == 0 {
        return Ok(record(settings.phase, epoch, &s, &[], started));
    }

    let mut senders = Vec::with_capacity(s.active);
    let mut receivers = Vec::with_capacity(s.active);
    for _ in 0..s.active {
        let (tx, rx) = sync_channel::<Message>(queue_capacity);
        senders.push(tx);
        receivers.push(rx);
    }
    let mut downstream: Vec<Option<SyncSender<Message>>> = senders.drain(1..).map(Some).collect();
    downstream.push(None);
    let feed = senders.pop().expect("first queue");

    let outcome = std::thread::scope(|scope| {
        let producer = scope.spawn(|| -> Result<()> {
            for ids in &s.batches {
                let (x, labels) = make_batch(data, ids, settings, epoch)?;
                let msg = Message {
                    x,
                    labels: Arc::new(labels),
                    carry: Carry::default(),
                };
                if feed.send(msg).is_err() {
                    break;
                }
            }
            drop(feed);
            Ok(())
        });
        let workers: Vec<_> = network
            .layers
            .iter_mut()
            .zip(&network.roles)
            .take(s.active)
            .zip(receivers.into_iter().zip(downstream))
            .enumerate()
            .map(|(l, ((layer, &role), (inbox, outbox)))| {
                let ctx = context(&s, settings, role, l);
                scope.spawn(move || run_stage(layer, ctx, inbox, outbox))
            })
            .collect();
        let fed = producer.join().expect("batch producer panicked");
        let ends: Vec<Result<StageEnd>> = workers
            .into_iter()
            .map(|w| w.join().expect("pipeline stage panicked"))
            .collect();
        (fed, ends)
    });

    let (fed, ends) = outcome;
    let mut tallies = Vec::with_capacity(s.active);
    for (layer, end) in ends.into_iter().enumerate() {
        match end {
            Ok(StageEnd::Finished(t)) => tallies.push(t),
            Ok(StageEnd::Abandoned) => {}
            Err(e) => {
                return Err(Error::Stage {
                    layer,
                    source: Box::new(e),
                })
            }
        }
    }
    fed?;
    if tallies.len() != s.active {
        return Err(Error::Invariant("pipeline stage stopped without an error".into()));
    }
    Ok(record(settings.phase, epoch, &s, &tallies, started))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_hier_dataset, SynthConfig};
    use crate::layers::{build_network, NetworkSpec};
    use crate::numerics::{AdamConfig, ScheduleConfig};

    fn toy() -> (Network<f32>, Dataset, Hierarchy) {
        let cfg = SynthConfig {
            num_classes: 4,
            levels: 2,
            n_per_class: 6,
            image_size: 8,
            ..SynthConfig::default()
        };
        let (data, tree) = synth_hier_dataset(&cfg).unwrap();
        let mut spec = NetworkSpec::new(&[4], 4, 1);
        spec.embed_dim = 8;
        let h = Hierarchy::new(&tree, crate::hierarchy::MappingStrategy::Balanced, spec.num_layers()).unwrap();
        let net = build_network(&spec, h.mapping(), AdamConfig::default(), 3).unwrap();
        (net, data, h)
    }

    fn settings() -> TrainSettings {
        TrainSettings {
            batch_size: 5,
            schedule: ScheduleConfig {
                lr_init: 1e-2,
                ..ScheduleConfig::for_epochs(3)
            },
            ..TrainSettings::default()
        }
    }

    #[test]
    fn batches_cover_every_sample_once() {
        let b = epoch_batches(11, 4, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 3]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_ne!(epoch_batches(11, 4, 1, 1), b);
    }

    #[test]
    fn pipeline_matches_sequential() {
        let (net, data, h) = toy();
        let st = settings();
        let mut seq = net.clone();
        let seq_rec = train_epoch_sequential(&mut seq, &data, &h, &st, 0).unwrap();
        for cap in [1, 3] {
            let mut pipe = net.clone();
            let rec = train_epoch_pipeline(&mut pipe, &data, &h, &st, 0, cap).unwrap();
            assert_eq!(pipe, seq);
            assert_eq!(rec.layers, seq_rec.layers);
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing_but_adam_counters() {
        let (net, data, h) = toy();
        let st = TrainSettings {
            schedule: ScheduleConfig {
                lr_init: 0.0,
                lr_min: 0.0,
                ..ScheduleConfig::for_epochs(1)
            },
            ..settings()
        };
        let mut trained = net.clone();
        let rec = train_epoch_sequential(&mut trained, &data, &h, &st, 0).unwrap();
        for (a, b) in trained.layers.iter().zip(&net.layers) {
            for (p, q) in a.params().iter().zip(b.params()) {
                assert_eq!(p.value, q.value);
            }
        }
        assert!(rec.layers.iter().all(|m| m.total_loss.is_finite() && m.hier_loss > 0.0));
    }

    #[test]
    fn mismatched_hierarchy_fails_before_updates() {
        let (net, data, _) = toy();
        let wrong = Hierarchy::flat(4, 9).unwrap();
        let mut trained = net.clone();
        assert!(matches!(
            train_epoch_sequential(&mut trained, &data, &wrong, &settings(), 0),
            Err(Error::Config(_))
        ));
        assert_eq!(trained, net);
    }
}
