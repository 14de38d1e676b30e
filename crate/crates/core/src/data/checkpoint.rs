//! Binary checkpoint container.
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `HCLFFCKP` |
//! | 4     | format version, `u32` LE |
//! | 8     | manifest length `m`, `u64` LE |
//! | m     | JSON manifest |
//! | 8     | payload length `p`, `u64` LE |
//! | p     | tensors as consecutive `f32` LE values, in manifest order |
//! | 8     | FNV-1a 64 hash of everything above, `u64` LE |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::inference::SipInterval;
use crate::layers::{LayerConfig, LayerState, Network, NetworkSpec, Param, PARAM_NAMES};
use crate::numerics::{AdamConfig, AdamState, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"HCLFFCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Which training stage produced the checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Flat pretraining, before a hierarchy exists.
    Pretrain,
    /// Training under the final hierarchy.
    Train,
}

/// Everything needed to evaluate a network or continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    pub network: Network<f32>,
    pub hierarchy: Hierarchy,
    /// Completed epochs of the current phase.
    pub epochs_done: usize,
    /// Seed from which every shuffle, augmentation and split stream derives.
    pub seed: u64,
    pub config: TrainConfig,
    pub sip: Option<SipInterval>,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    step_count: u64,
    config: AdamConfig,
}

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    index: usize,
    config: LayerConfig,
    adam: Vec<AdamMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    dtype: String,
    phase: Phase,
    epochs_done: usize,
    seed: u64,
    config: TrainConfig,
    spec: NetworkSpec,
    hierarchy: String,
    sip: Option<SipInterval>,
    layers: Vec<LayerMeta>,
    tensors: Vec<TensorMeta>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn layer_tensors(layer: &LayerState<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out = Vec::with_capacity(12);
    for (p, name) in layer.params().into_iter().zip(PARAM_NAMES) {
        let prefix = format!("layer{}.{name}", layer.index);
        out.push((prefix.clone(), &p.value));
        out.push((format!("{prefix}.m"), &p.adam.first_moment));
        out.push((format!("{prefix}.v"), &p.adam.second_moment));
    }
    out
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut payload: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    let mut layers = Vec::new();
    let mut offset = 0;
    for layer in &ckpt.network.layers {
        for (name, t) in layer_tensors(layer) {
            tensors.push(TensorMeta {
                name,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        layers.push(LayerMeta {
            index: layer.index,
            config: layer.config,
            adam: layer
                .params()
                .iter()
                .map(|p| AdamMeta {
                    step_count: p.adam.step_count,
                    config: p.adam.config,
                })
                .collect(),
        });
    }
    let manifest = Manifest {
        dtype: f32::DTYPE.into(),
        phase: ckpt.phase,
        epochs_done: ckpt.epochs_done,
        seed: ckpt.seed,
        config: ckpt.config.clone(),
        spec: ckpt.network.spec.clone(),
        hierarchy: ckpt.hierarchy.to_text(),
        sip: ckpt.sip,
        layers,
        tensors,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(36 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&fnv1a(&out).to_le_bytes());
    Ok(out)
}

fn u64_at(bytes: &[u8], at: usize, what: &str) -> Result<u64> {
    let b = bytes
        .get(at..at + 8)
        .ok_or_else(|| corrupt(format!("file ends inside the {what}")))?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

fn section(bytes: &[u8], at: usize, len: u64, what: &str) -> Result<(usize, usize)> {
    let len = usize::try_from(len).map_err(|_| corrupt(format!("{what} length overflows")))?;
    let end = at
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt(format!("{what} length {len} runs past the end of the file")))?;
    Ok((at, end))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 36 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let (m0, m1) = section(bytes, 20, u64_at(bytes, 12, "manifest length")?, "manifest")?;
    let (p0, p1) = section(bytes, m1 + 8, u64_at(bytes, m1, "payload length")?, "payload")?;
    if p1 + 8 != bytes.len() {
        return Err(corrupt(format!(
            "sections end at byte {}, file has {} bytes",
            p1 + 8,
            bytes.len()
        )));
    }
    if fnv1a(&bytes[..p1]) != u64_at(bytes, p1, "checksum")? {
        return Err(corrupt("checksum mismatch"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&bytes[m0..m1]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.dtype != f32::DTYPE {
        return Err(corrupt(format!("dtype {} is not supported", manifest.dtype)));
    }
    let payload = &bytes[p0..p1];
    if !payload.len().is_multiple_of(4) {
        return Err(corrupt("payload is not a whole number of f32 values"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();

    let mut next = 0;
    let mut metas = manifest.tensors.iter();
    let mut take = |expect_name: &str, expect_shape: &[usize]| -> Result<Tensor<f32>> {
        let meta = metas
            .next()
            .ok_or_else(|| corrupt(format!("tensor {expect_name} missing")))?;
        if meta.name != expect_name || meta.shape != expect_shape || meta.offset != next {
            return Err(corrupt(format!(
                "tensor {} {:?} at {} does not match expected {expect_name} {expect_shape:?} at {next}",
                meta.name, meta.shape, meta.offset
            )));
        }
        let len: usize = expect_shape.iter().product();
        let data = values
            .get(next..next + len)
            .ok_or_else(|| corrupt(format!("payload too short for {expect_name}")))?;
        next += len;
        Tensor::from_vec(expect_shape, data.to_vec())
    };

    let spec = manifest.spec;
    let expected = spec.layer_configs().map_err(|e| corrupt(e.to_string()))?;
    if manifest.layers.len() != expected.len() {
        return Err(corrupt(format!(
            "{} layers stored, spec needs {}",
            manifest.layers.len(),
            expected.len()
        )));
    }
    let mut layers = Vec::with_capacity(expected.len());
    for (i, meta) in manifest.layers.iter().enumerate() {
        let cfg = meta.config;
        if meta.index != i || meta.adam.len() != PARAM_NAMES.len() {
            return Err(corrupt(format!("layer {i} metadata is malformed")));
        }
        let shapes: [Vec<usize>; 4] = [
            vec![cfg.out_channels, cfg.in_channels, cfg.kernel, cfg.kernel],
            vec![cfg.out_channels],
            vec![cfg.embed_dim, cfg.out_channels],
            vec![cfg.embed_dim],
        ];
        let mut params = Vec::with_capacity(4);
        for ((shape, name), adam) in shapes.iter().zip(PARAM_NAMES).zip(&meta.adam) {
            let prefix = format!("layer{i}.{name}");
            let value = take(&prefix, shape)?;
            let first_moment = take(&format!("{prefix}.m"), shape)?;
            let second_moment = take(&format!("{prefix}.v"), shape)?;
            params.push(Param {
                value,
                adam: AdamState {
                    first_moment,
                    second_moment,
                    step_count: adam.step_count,
                    config: adam.config,
                },
            });
        }
        let mut it = params.into_iter();
        let mut next_param = || it.next().expect("four parameters");
        layers.push(LayerState {
            index: i,
            config: cfg,
            conv_weights: next_param(),
            conv_bias: next_param(),
            proj_weights: next_param(),
            proj_bias: next_param(),
        });
    }
    if next != values.len() || metas.next().is_some() {
        return Err(corrupt("payload holds data beyond the listed tensors"));
    }

    let hierarchy = Hierarchy::parse(&manifest.hierarchy, Path::new("<checkpoint>"))
        .map_err(|e| corrupt(format!("embedded hierarchy: {e}")))?;
    if hierarchy.num_layers() != layers.len()
        || layers
            .iter()
            .zip(hierarchy.mapping().assignment())
            .any(|(l, &lv)| l.config.hierarchy_level != lv)
    {
        return Err(corrupt("layer levels disagree with the embedded hierarchy"));
    }
    let network = Network {
        roles: spec.roles(),
        spec,
        layers,
    };
    network.validate().map_err(|e| corrupt(e.to_string()))?;
    if let Some(sip) = manifest.sip {
        if sip.s > sip.e || sip.e >= network.num_layers() {
            return Err(corrupt("stored layer interval is out of range"));
        }
    }
    manifest.config.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(Checkpoint {
        phase: manifest.phase,
        network,
        hierarchy,
        epochs_done: manifest.epochs_done,
        seed: manifest.seed,
        config: manifest.config,
        sip: manifest.sip,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
