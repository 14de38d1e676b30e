use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::Tensor;
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(arg_err!("unknown split {s:?}")),
        }
    }
}

/// Labelled images `[N, C, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        images.expect_ndim(4, "dataset images")?;
        let n = images.shape()[0];
        if n == 0 {
            return Err(arg_err!("dataset is empty"));
        }
        if labels.len() != n {
            return Err(arg_err!("{n} images but {} labels", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(arg_err!("label {bad} out of range for {num_classes} classes"));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(arg_err!("pixel value {v} outside [0, 1]"));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.slice0(i)
    }

    /// Same data with a larger label space, e.g. a subset missing some classes.
    pub fn with_num_classes(self, num_classes: usize) -> Result<Self> {
        Dataset::new(self.images, self.labels, num_classes, self.split)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Images `[n, C, H, W]` and labels of the given samples, in order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let [c, h, w] = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(arg_err!("sample {i} out of range for {} samples", self.len()));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::from_vec(&[indices.len(), c, h, w], data)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (images, labels) = self.gather(indices)?;
        Dataset::new(images, labels, self.num_classes, self.split)
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Shuffles the sample indices with `seed` and moves the last
/// `val_fraction` of them into a validation set.
pub fn train_val_split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
        return Err(arg_err!("validation fraction must lie in (0, 1), got {val_fraction}"));
    }
    let n = dataset.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(arg_err!("{n} samples are too few for a validation split"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[tag::SPLIT]));
    let (train_idx, val_idx) = order.split_at(n - n_val);
    let train = dataset.subset(train_idx)?.with_split(Split::Train);
    let val = dataset.subset(val_idx)?.with_split(Split::Val);
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> Dataset {
        let data = (0..n * 4).map(|i| (i % 5) as f32 / 4.0).collect();
        let images = Tensor::from_vec(&[n, 1, 2, 2], data).unwrap();
        Dataset::new(images, (0..n).map(|i| i % 3).collect(), 3, Split::Train).unwrap()
    }

    #[test]
    fn rejects_invalid_contents() {
        let images = Tensor::from_vec(&[1, 1, 1, 1], vec![1.5f32]).unwrap();
        assert!(Dataset::new(images.clone(), vec![0], 2, Split::Test).is_err());
        let ok = Tensor::from_vec(&[1, 1, 1, 1], vec![0.5f32]).unwrap();
        assert!(Dataset::new(ok.clone(), vec![2], 2, Split::Test).is_err());
        assert!(Dataset::new(ok, vec![], 2, Split::Test).is_err());
    }

    #[test]
    fn split_is_seeded_disjoint_and_complete() {
        let ds = tiny(20);
        let (a, b) = train_val_split(&ds, 0.1, 7).unwrap();
        assert_eq!((a.len(), b.len()), (18, 2));
        assert_eq!(b.split(), Split::Val);
        let (a2, b2) = train_val_split(&ds, 0.1, 7).unwrap();
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn gather_keeps_order() {
        let ds = tiny(4);
        let (x, y) = ds.gather(&[3, 1]).unwrap();
        assert_eq!(x.slice0(0), ds.image(3));
        assert_eq!(y, vec![0, 1]);
        assert!(ds.gather(&[4]).is_err());
    }
}
