use std::path::Path;

use super::cifar::load_cifar10;
use super::config::{DataKind, TrainConfig};
use super::dataset::{train_val_split, Dataset, Split};
use super::idx::{load_idx, mnist_paths};
use super::synth::{synth_hier_dataset, synth_test_set};
use crate::error::{Error, Result};

/// Train, validation and test sets of a run.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DataSplits {
    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn load_raw(cfg: &TrainConfig, split: Split) -> Result<Dataset> {
    let dir = &cfg.data.dir;
    let ds = match cfg.data.kind {
        DataKind::Mnist => {
            let (images, labels) = mnist_paths(dir, split);
            load_idx(&images, &labels)?
        }
        DataKind::Cifar10 => {
            let names: Vec<String> = if split == Split::Test {
                vec!["test_batch.bin".into()]
            } else {
                (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
            };
            let paths: Vec<_> = names.iter().map(|n| dir.join(n)).collect();
            let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
            load_cifar10(&refs)?
        }
        DataKind::Synthetic => {
            let synth = cfg.data.synthetic;
            if split == Split::Test {
                synth_test_set(&synth)?
            } else {
                synth_hier_dataset(&synth)?.0
            }
        }
    };
    let k = cfg.model.num_classes;
    if ds.num_classes() > k {
        return Err(Error::Config(format!(
            "data has {} classes but the model is configured for {k}",
            ds.num_classes()
        )));
    }
    ds.with_num_classes(k)
}

/// Loads the configured dataset, applies the subset limits and carves the
/// validation set out of the training data.
pub fn load_data(cfg: &TrainConfig) -> Result<DataSplits> {
    let mut full = load_raw(cfg, Split::Train)?;
    if let Some(n) = cfg.data.train_subset {
        full = full.take(n)?;
    }
    let (train, val) = train_val_split(&full, cfg.data.val_fraction, cfg.seed)?;
    let mut test = load_raw(cfg, Split::Test)?.with_split(Split::Test);
    if let Some(n) = cfg.data.test_subset {
        test = test.take(n)?;
    }
    Ok(DataSplits { train, val, test })
}

/// One split of the configured dataset.
pub fn load_split(cfg: &TrainConfig, split: Split) -> Result<Dataset> {
    if split == Split::Test {
        let test = load_raw(cfg, Split::Test)?.with_split(Split::Test);
        return match cfg.data.test_subset {
            Some(n) => test.take(n),
            None => Ok(test),
        };
    }
    let splits = load_data(cfg)?;
    Ok(if split == Split::Train { splits.train } else { splits.val })
}
