//! IDX files as distributed for MNIST-style datasets: a big-endian magic
//! word (`0x0000080d` with `d` the number of dimensions), one big-endian
//! `u32` per dimension, then unsigned bytes.

use std::path::{Path, PathBuf};

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let word = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(self.pos, format!("file ends inside the {what}")))?;
        self.pos = end;
        Ok(u32::from_be_bytes(word.try_into().expect("4 bytes")))
    }

    fn header(&mut self, magic: u32, dims: usize) -> Result<Vec<usize>> {
        let found = self.u32("magic number")?;
        if found != magic {
            return Err(self.fail(0, format!("magic 0x{found:08x}, expected 0x{magic:08x}")));
        }
        (0..dims)
            .map(|d| self.u32(&format!("dimension {d}")).map(|v| v as usize))
            .collect()
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        if have != len {
            return Err(self.fail(
                self.pos,
                format!("expected {len} payload bytes, found {have}"),
            ));
        }
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        Ok(out)
    }
}

/// Decodes an image file into `[N, 1, H, W]` scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let mut r = Reader { bytes, pos: 0, path };
    let dims = r.header(IMAGE_MAGIC, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if n == 0 || h == 0 || w == 0 {
        return Err(r.fail(4, format!("degenerate dimensions {n}x{h}x{w}")));
    }
    let pixels = r.payload(n * h * w)?;
    let data = pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
    Tensor::from_vec(&[n, 1, h, w], data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let mut r = Reader { bytes, pos: 0, path };
    let n = r.header(LABEL_MAGIC, 1)?[0];
    Ok(r.payload(n)?.iter().map(|&b| usize::from(b)).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image file and its label file. The class count is one more
/// than the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read(labels_path)?, labels_path)?;
    if labels.len() != images.shape()[0] {
        return Err(Error::Parse {
            path: labels_path.to_path_buf(),
            offset: 4,
            msg: format!(
                "{} labels for {} images in {}",
                labels.len(),
                images.shape()[0],
                images_path.display()
            ),
        });
    }
    let k = labels.iter().max().map_or(1, |&m| m + 1);
    Dataset::new(images, labels, k, Split::Train)
}

/// Encodes `[N, 1, H, W]` images in `[0, 1]` as an IDX image file.
pub fn encode_idx_images(images: &Tensor<f32>) -> Result<Vec<u8>> {
    images.expect_ndim(4, "idx images")?;
    let s = images.shape();
    if s[1] != 1 {
        return Err(Error::Argument(format!("IDX images are single-channel, got {}", s[1])));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGE_MAGIC, s[0] as u32, s[2] as u32, s[3] as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &y in labels {
        out.push(u8::try_from(y).map_err(|_| Error::Argument(format!("label {y} does not fit a byte")))?);
    }
    Ok(out)
}

pub fn save_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let write = |p: &Path, b: Vec<u8>| std::fs::write(p, b).map_err(|e| Error::io(p, e));
    write(images_path, encode_idx_images(dataset.images())?)?;
    write(labels_path, encode_idx_labels(dataset.labels())?)
}

/// Standard file names of an MNIST-layout directory for a split.
pub fn mnist_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let prefix = if split == Split::Test { "t10k" } else { "train" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}
