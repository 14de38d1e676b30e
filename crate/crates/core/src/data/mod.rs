//! Datasets, augmentation, run configuration and checkpoints.

mod augment;
mod checkpoint;
mod cifar;
mod config;
mod dataset;
mod idx;
mod source;
mod synth;

pub use augment::{augment, augment_batch, AugmentConfig, AugmentFamily};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Phase,
    FORMAT_VERSION, MAGIC,
};
pub use cifar::{encode_cifar10, load_cifar10, parse_cifar10};
pub use config::{
    DataConfig, DataKind, ExecMode, ExecutionConfig, HierarchyConfig, ModelConfig,
    ObjectiveConfig, ScheduleOverrides, TrainConfig, TrainingConfig,
};
pub use dataset::{train_val_split, Dataset, Split};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, mnist_paths, parse_idx_images,
    parse_idx_labels, save_idx, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use source::{load_data, load_split, DataSplits};
pub use synth::{synth_hier_dataset, synth_test_set, synth_tree, SynthConfig};
