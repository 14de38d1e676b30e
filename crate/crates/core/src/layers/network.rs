use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::hierarchy::LevelMapping;
use crate::numerics::{avg_pool_2x2, AdamConfig, Real, Tensor};

use super::cw_conv::{
    cw_conv_forward, forward_batch, GoodnessMode, LayerConfig, LayerOutput, LayerState,
};

/// Layers per residual block.
pub const LAYERS_PER_BLOCK: usize = 4;

/// Architecture of a stem + residual-block network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Width of each residual block; one to four blocks, each twice the
    /// width of the previous.
    pub block_widths: Vec<usize>,
    /// Width of the stem layer; must equal the first block width.
    pub stem_width: usize,
    pub layers_per_block: usize,
    pub num_classes: usize,
    pub goodness_mode: GoodnessMode,
    pub in_channels: usize,
    pub embed_dim: usize,
    pub kernel: usize,
    pub norm_eps: f64,
}

impl NetworkSpec {
    /// Standard configuration for the given block widths.
    pub fn new(block_widths: &[usize], num_classes: usize, in_channels: usize) -> Self {
        NetworkSpec {
            block_widths: block_widths.to_vec(),
            stem_width: block_widths.first().copied().unwrap_or(0),
            layers_per_block: LAYERS_PER_BLOCK,
            num_classes,
            goodness_mode: GoodnessMode::Mean,
            in_channels,
            embed_dim: 128,
            kernel: 3,
            norm_eps: 1e-5,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.block_widths.len()
    }

    pub fn num_layers(&self) -> usize {
        1 + self.layers_per_block * self.num_blocks()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.block_widths.is_empty() || self.block_widths.len() > 4 {
            return cfg(format!(
                "need 1 to 4 residual blocks, got {}",
                self.block_widths.len()
            ));
        }
        if self.layers_per_block != LAYERS_PER_BLOCK {
            return cfg(format!(
                "residual blocks have {LAYERS_PER_BLOCK} layers, got {}",
                self.layers_per_block
            ));
        }
        if self.stem_width != self.block_widths[0] {
            return cfg(format!(
                "stem width {} must equal the first block width {}",
                self.stem_width, self.block_widths[0]
            ));
        }
        for (i, &w) in self.block_widths.iter().enumerate() {
            if w < self.num_classes || w % self.num_classes != 0 {
                return cfg(format!(
                    "block {i} width {w} is not a positive multiple of {} classes",
                    self.num_classes
                ));
            }
            if i > 0 && w != 2 * self.block_widths[i - 1] {
                return cfg(format!(
                    "block {i} width {w} must be twice the previous width {}",
                    self.block_widths[i - 1]
                ));
            }
        }
        if self.in_channels == 0 {
            return cfg("input channel count must be positive".into());
        }
        Ok(())
    }

    /// Position of every layer in the topology.
    pub fn roles(&self) -> Vec<LayerRole> {
        let blocks = self.num_blocks();
        let mut roles = vec![LayerRole::Stem];
        for block in 0..blocks {
            for position in 0..self.layers_per_block {
                roles.push(LayerRole::Block {
                    block,
                    position,
                    last_block: block + 1 == blocks,
                });
            }
        }
        roles
    }

    /// Shape-level configuration of every layer, levels left at 1.
    pub fn layer_configs(&self) -> Result<Vec<LayerConfig>> {
        self.validate()?;
        let base = |cin: usize, cout: usize, stride: usize| LayerConfig {
            in_channels: cin,
            out_channels: cout,
            num_classes: self.num_classes,
            kernel: self.kernel,
            stride,
            embed_dim: self.embed_dim,
            mode: self.goodness_mode,
            norm_eps: self.norm_eps,
            hierarchy_level: 1,
        };
        Ok(self
            .roles()
            .into_iter()
            .map(|role| match role {
                LayerRole::Stem => base(self.in_channels, self.stem_width, 1),
                LayerRole::Block { block, position, .. } => {
                    let w = self.block_widths[block];
                    let stride = if position == 0 && block > 0 { 2 } else { 1 };
                    base(w, w, stride)
                }
            })
            .collect())
    }
}

/// Where a layer sits in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerRole {
    Stem,
    Block {
        block: usize,
        /// 0..4 within the block.
        position: usize,
        last_block: bool,
    },
}

/// Shortcut tensors held between layers of one residual block, batched.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Carry<T> {
    /// Input of the current block, concatenated onto its output at the
    /// block boundary.
    pub block_input: Option<Tensor<T>>,
    /// Output of the block's second layer, added to the output of the fourth.
    pub mid: Option<Tensor<T>>,
}

/// Parameter-free shortcut merge of two `[C, H, W]` features.
///
/// Inside a block the shortcut is added. At a block boundary it is average
/// pooled when it has twice the resolution of `main` and then concatenated
/// behind `main` along the channel axis.
pub fn residual_merge<T: Real>(main: &Tensor<T>, shortcut: &Tensor<T>, boundary: bool) -> Result<Tensor<T>> {
    main.expect_ndim(3, "residual main branch")?;
    shortcut.expect_ndim(3, "residual shortcut")?;
    if !boundary {
        shortcut.expect_shape(main.shape(), "within-block shortcut")?;
        return main.add(shortcut);
    }
    let (c, h, w) = (main.shape()[0], main.shape()[1], main.shape()[2]);
    let (cr, hr, wr) = (shortcut.shape()[0], shortcut.shape()[1], shortcut.shape()[2]);
    if cr != c {
        return Err(arg_err!(
            "boundary shortcut has {cr} channels, main branch {c}"
        ));
    }
    let pooled;
    let aligned = if (hr, wr) == (h, w) {
        shortcut
    } else if (hr, wr) == (2 * h, 2 * w) {
        pooled = avg_pool_2x2(shortcut)?;
        &pooled
    } else {
        return Err(arg_err!(
            "boundary shortcut {:?} cannot be aligned to {:?}",
            shortcut.shape(),
            main.shape()
        ));
    };
    let mut data = Vec::with_capacity(2 * main.len());
    data.extend_from_slice(main.data());
    data.extend_from_slice(aligned.data());
    Tensor::from_vec(&[2 * c, h, w], data)
}

/// [`residual_merge`] applied to every item of `[N, C, H, W]` batches.
pub fn residual_merge_batch<T: Real>(
    main: &Tensor<T>,
    shortcut: &Tensor<T>,
    boundary: bool,
) -> Result<Tensor<T>> {
    main.expect_ndim(4, "residual main batch")?;
    shortcut.expect_ndim(4, "residual shortcut batch")?;
    let n = main.shape()[0];
    if shortcut.shape()[0] != n {
        return Err(arg_err!("residual batches differ in size"));
    }
    let merged: Vec<Tensor<T>> = (0..n)
        .map(|i| residual_merge(&main.item(i), &shortcut.item(i), boundary))
        .collect::<Result<_>>()?;
    Tensor::stack(&merged)
}

/// Computes the next layer's input from a layer's decoupled output, updating
/// the shortcut carry. `input` is the tensor the layer consumed.
pub fn route<T: Real>(
    role: LayerRole,
    input: &Tensor<T>,
    output: Tensor<T>,
    carry: &mut Carry<T>,
) -> Result<Tensor<T>> {
    let LayerRole::Block {
        position,
        last_block,
        ..
    } = role
    else {
        return Ok(output);
    };
    match position {
        0 => {
            carry.block_input = Some(input.clone());
            Ok(output)
        }
        1 => {
            carry.mid = Some(output.clone());
            Ok(output)
        }
        2 => Ok(output),
        _ => {
            let missing = || Error::Invariant("block shortcut missing from carry".into());
            let mid = carry.mid.take().ok_or_else(missing)?;
            let block_input = carry.block_input.take().ok_or_else(missing)?;
            let fused = residual_merge_batch(&output, &mid, false)?;
            if last_block {
                Ok(fused)
            } else {
                residual_merge_batch(&fused, &block_input, true)
            }
        }
    }
}

/// Ordered layers and their roles.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerState<T>>,
    pub roles: Vec<LayerRole>,
}

/// Initializes every layer and tags it with the level from `mapping`.
pub fn build_network<T: Real>(
    spec: &NetworkSpec,
    mapping: &LevelMapping,
    adam: AdamConfig,
    seed: u64,
) -> Result<Network<T>> {
    let configs = spec.layer_configs()?;
    if mapping.num_layers() != configs.len() {
        return Err(Error::Config(format!(
            "level mapping covers {} layers, network has {}",
            mapping.num_layers(),
            configs.len()
        )));
    }
    let layers = configs
        .into_iter()
        .enumerate()
        .map(|(i, mut cfg)| {
            cfg.hierarchy_level = mapping.assignment()[i];
            LayerState::new(i, cfg, adam, seed)
        })
        .collect::<Result<_>>()?;
    Ok(Network {
        spec: spec.clone(),
        layers,
        roles: spec.roles(),
    })
}

/// Per-layer goodness and final-layer pooled features for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput<T> {
    /// One `[N, K]` tensor per layer.
    pub goodness: Vec<Tensor<T>>,
    /// Spatial means of the last layer's post-ReLU activations, `[N, C]`.
    pub final_preact: Tensor<T>,
    /// Spatial means of the last layer's decoupled features, `[N, C]`.
    pub final_decoupled: Tensor<T>,
}

impl<T: Real> Network<T> {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let configs = self.spec.layer_configs()?;
        if configs.len() != self.layers.len() || self.roles != self.spec.roles() {
            return Err(Error::Invariant("layer list does not match the network spec".into()));
        }
        for (i, (layer, cfg)) in self.layers.iter().zip(configs).enumerate() {
            let mut expect = cfg;
            expect.hierarchy_level = layer.config.hierarchy_level;
            if layer.config != expect || layer.index != i {
                return Err(Error::Invariant(format!("layer {i} configuration does not match the network description")));
            }
            layer.validate()?;
        }
        Ok(())
    }

    /// Inference pass over a batch `[N, C, H, W]`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<NetworkOutput<T>> {
        let mut x = input.clone();
        let mut carry = Carry::default();
        let mut goodness = Vec::with_capacity(self.layers.len());
        let mut last = None;
        for (layer, &role) in self.layers.iter().zip(&self.roles) {
            let out = forward_batch(layer, &x)?;
            goodness.push(out.goodness);
            x = route(role, &x, out.decoupled, &mut carry)?;
            last = Some((out.pooled_preact, out.pooled_decoupled));
        }
        let (final_preact, final_decoupled) = last.expect("at least one layer");
        Ok(NetworkOutput {
            goodness,
            final_preact,
            final_decoupled,
        })
    }

    /// Full per-layer outputs for a single `[C, H, W]` sample.
    pub fn trace_sample(&self, input: &Tensor<T>) -> Result<Vec<LayerOutput<T>>> {
        input.expect_ndim(3, "sample")?;
        let mut x = Tensor::stack(std::slice::from_ref(input))?;
        let mut carry = Carry::default();
        let mut outs = Vec::with_capacity(self.layers.len());
        for (layer, &role) in self.layers.iter().zip(&self.roles) {
            let out = cw_conv_forward(layer, &x.item(0))?;
            let dec = Tensor::stack(std::slice::from_ref(&out.decoupled))?;
            x = route(role, &x, dec, &mut carry)?;
            outs.push(out);
        }
        Ok(outs)
    }
}
