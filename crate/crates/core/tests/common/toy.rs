//! A small synthetic setup for trainer tests.

use hclff::data::{
    decode_checkpoint, encode_checkpoint, load_data, synth_tree, AugmentConfig, Checkpoint,
    DataKind, DataSplits, Phase, SynthConfig, TrainConfig,
};
use hclff::hierarchy::Hierarchy;
use hclff::layers::Network;
use hclff::trainer::{fresh_checkpoint, phase_settings, run_phase, RunMode, TrainSettings};

/// Four classes in two coarse groups, 8×8 images, 80 training samples
/// (10 batches of 8), one residual block of width 8.
pub fn toy_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    };
    cfg.data.kind = DataKind::Synthetic;
    cfg.data.val_fraction = 0.2;
    cfg.data.synthetic = SynthConfig {
        num_classes: 4,
        levels: 2,
        n_per_class: 25,
        image_size: 8,
        noise: 0.1,
        seed: 3,
    };
    cfg.model.widths = vec![8];
    cfg.model.num_classes = 4;
    cfg.model.embed_dim = 8;
    cfg.training.epochs = 3;
    cfg.training.batch_size = 8;
    cfg.augment = AugmentConfig::digits();
    cfg
}

pub fn toy_data(cfg: &TrainConfig) -> DataSplits {
    load_data(cfg).unwrap()
}

pub fn toy_hierarchy(cfg: &TrainConfig) -> Hierarchy {
    let layers = cfg.network_spec(1).num_layers();
    Hierarchy::new(&synth_tree(cfg.data.synthetic.levels).unwrap(), cfg.hierarchy.strategy, layers).unwrap()
}

pub fn toy_checkpoint(cfg: &TrainConfig) -> Checkpoint {
    fresh_checkpoint(cfg, Phase::Train, toy_hierarchy(cfg), 1).unwrap()
}

pub fn toy_settings(cfg: &TrainConfig, active: Option<usize>) -> TrainSettings {
    TrainSettings {
        active_layers: active,
        ..phase_settings(cfg, Phase::Train)
    }
}

/// Runs the checkpoint to `until` epochs without writing anything.
pub fn train_to(ckpt: &mut Checkpoint, data: &DataSplits, until: usize, mode: RunMode) {
    run_phase(ckpt, data, until, mode, &mut |_, _| Ok(())).unwrap();
}

/// Serializes and reloads a checkpoint through the binary format.
pub fn reload(ckpt: &Checkpoint) -> Checkpoint {
    decode_checkpoint(&encode_checkpoint(ckpt).unwrap()).unwrap()
}

/// Every stored value of every layer, as raw bits.
pub fn param_bits(net: &Network<f32>) -> Vec<u32> {
    net.layers
        .iter()
        .flat_map(|l| l.params().into_iter().flat_map(|p| {
            p.value
                .data()
                .iter()
                .chain(p.adam.first_moment.data())
                .chain(p.adam.second_moment.data())
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        }))
        .collect()
}
