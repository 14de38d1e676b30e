//! CIFAR-10 binary batches: records of one label byte followed by a
//! 32×32 red plane, green plane and blue plane.

use std::path::Path;

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const RECORD: usize = 1 + 3 * PLANE;
pub const CLASSES: usize = 10;

fn parse_into(bytes: &[u8], path: &Path, pixels: &mut Vec<f32>, labels: &mut Vec<usize>) -> Result<()> {
    let fail = |offset: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD) {
        return Err(fail(
            bytes.len() - bytes.len() % RECORD,
            format!("{} bytes is not a whole number of {RECORD}-byte records", bytes.len()),
        ));
    }
    for (r, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let label = usize::from(rec[0]);
        if label >= CLASSES {
            return Err(fail(r * RECORD, format!("label {label} out of range")));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| f32::from(b) / 255.0));
    }
    Ok(())
}

pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    parse_into(bytes, path, &mut pixels, &mut labels)?;
    let images = Tensor::from_vec(&[labels.len(), 3, SIDE, SIDE], pixels)?;
    Dataset::new(images, labels, CLASSES, Split::Train)
}

/// Concatenates the records of every batch file in order.
pub fn load_cifar10(bin_paths: &[&Path]) -> Result<Dataset> {
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    if bin_paths.is_empty() {
        return Err(Error::Argument("no CIFAR-10 batch files given".into()));
    }
    for &p in bin_paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        parse_into(&bytes, p, &mut pixels, &mut labels)?;
    }
    let images = Tensor::from_vec(&[labels.len(), 3, SIDE, SIDE], pixels)?;
    Dataset::new(images, labels, CLASSES, Split::Train)
}

pub fn encode_cifar10(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.image_shape() != [3, SIDE, SIDE] || dataset.num_classes() > CLASSES {
        return Err(Error::Argument(format!(
            "CIFAR-10 records hold 3x32x32 images of 10 classes, got {:?}",
            dataset.image_shape()
        )));
    }
    let mut out = Vec::with_capacity(dataset.len() * RECORD);
    for i in 0..dataset.len() {
        out.push(dataset.labels()[i] as u8);
        out.extend(dataset.image(i).iter().map(|&v| (v * 255.0).round() as u8));
    }
    Ok(out)
}
