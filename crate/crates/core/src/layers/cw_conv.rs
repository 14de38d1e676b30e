use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::{
    adam_step, conv2d_param_grads_raw, conv2d_raw, group_norm_backward_raw, group_norm_raw, im2col,
    length_norm_backward_raw, length_norm_raw, linear_backward_raw, linear_raw, AdamConfig,
    AdamState, ConvDims, ConvGeometry, Real, Tensor,
};
use crate::objectives::{hiercwc_loss, supcon_loss, SuperClassPartition, SupconReduction};
use crate::rng;

/// Samples per work unit. Gradients are summed inside a chunk in sample
/// order and then across chunks in chunk order, so the result does not
/// depend on the thread count.
pub const CHUNK: usize = 8;

/// How a class subset of channels turns into a goodness score, and the
/// matching decoupling normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GoodnessMode {
    /// Mean activation of the subset; decoupled by per-subset group norm.
    #[default]
    Mean,
    /// Mean squared activation of the subset; decoupled by dividing the whole
    /// layer output by its root-mean-square.
    SumSquares,
}

/// Static shape and hyperparameters of one CW-Conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub num_classes: usize,
    pub kernel: usize,
    pub stride: usize,
    pub embed_dim: usize,
    pub mode: GoodnessMode,
    pub norm_eps: f64,
    pub hierarchy_level: usize,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        let (c, k) = (self.out_channels, self.num_classes);
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {k}")));
        }
        if c < k || c % k != 0 {
            return Err(Error::Config(format!(
                "layer width {c} must be a positive multiple of the class count {k}"
            )));
        }
        if self.in_channels == 0 || self.embed_dim == 0 {
            return Err(Error::Config("layer input channels and embedding size must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if !(1..=2).contains(&self.stride) {
            return Err(Error::Config(format!("stride must be 1 or 2, got {}", self.stride)));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("normalization eps must be positive".into()));
        }
        if self.hierarchy_level == 0 {
            return Err(Error::Config("hierarchy level must be at least 1".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            stride: self.stride,
            padding: self.kernel / 2,
        }
    }

    /// Channels per class subset.
    pub fn subset_channels(&self) -> usize {
        self.out_channels / self.num_classes
    }
}

/// A trainable tensor and its optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub adam: AdamState<T>,
}

impl<T: Real> Param<T> {
    fn new(value: Tensor<T>, adam: AdamConfig) -> Result<Self> {
        let state = AdamState::new(value.shape(), adam)?;
        Ok(Param { value, adam: state })
    }

    fn uniform(shape: &[usize], bound: f64, adam: AdamConfig, rng: &mut impl Rng) -> Result<Self> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Self::new(Tensor::from_vec(shape, data)?, adam)
    }
}

/// Parameters and optimizer state of one CW-Conv layer, including its
/// projection head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState<T> {
    pub index: usize,
    pub config: LayerConfig,
    pub conv_weights: Param<T>,
    pub conv_bias: Param<T>,
    pub proj_weights: Param<T>,
    pub proj_bias: Param<T>,
}

/// Names of the parameter tensors in storage order.
pub const PARAM_NAMES: [&str; 4] = ["conv_weights", "conv_bias", "proj_weights", "proj_bias"];

impl<T: Real> LayerState<T> {
    /// Fan-in scaled uniform initialization with zero biases, drawn from a
    /// stream keyed by `(seed, index)`.
    pub fn new(index: usize, config: LayerConfig, adam: AdamConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[rng::tag::LAYER_INIT, index as u64]);
        let (cin, cout, k, e) = (
            config.in_channels,
            config.out_channels,
            config.kernel,
            config.embed_dim,
        );
        let conv_bound = (6.0 / (cin * k * k) as f64).sqrt();
        let proj_bound = 1.0 / (cout as f64).sqrt();
        Ok(LayerState {
            index,
            config,
            conv_weights: Param::uniform(&[cout, cin, k, k], conv_bound, adam, &mut rng)?,
            conv_bias: Param::new(Tensor::zeros(&[cout]), adam)?,
            proj_weights: Param::uniform(&[e, cout], proj_bound, adam, &mut rng)?,
            proj_bias: Param::new(Tensor::zeros(&[e]), adam)?,
        })
    }

    pub fn params(&self) -> [&Param<T>; 4] {
        [
            &self.conv_weights,
            &self.conv_bias,
            &self.proj_weights,
            &self.proj_bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 4] {
        [
            &mut self.conv_weights,
            &mut self.conv_bias,
            &mut self.proj_weights,
            &mut self.proj_bias,
        ]
    }

    /// Checks that stored tensors agree with `config`.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let shapes: [Vec<usize>; 4] = [
            vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
            vec![c.out_channels],
            vec![c.embed_dim, c.out_channels],
            vec![c.embed_dim],
        ];
        for ((p, shape), name) in self.params().iter().zip(&shapes).zip(PARAM_NAMES) {
            let what = format!("layer {} {name}", self.index);
            p.value.expect_shape(shape, &what)?;
            p.adam.first_moment.expect_shape(shape, &what)?;
            p.adam.second_moment.expect_shape(shape, &what)?;
            p.value.check_finite(&what)?;
        }
        Ok(())
    }
}

/// Everything a layer produces for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput<T> {
    /// Post-ReLU activations `[C, H, W]`.
    pub preact: Tensor<T>,
    /// Per-class goodness, length `K`.
    pub goodness: Vec<T>,
    /// Goodness-decoupled features `[C, H, W]`, the tensor forwarded downstream.
    pub decoupled: Tensor<T>,
    /// Projection-head output.
    pub embedding: Tensor<T>,
}

/// Batched forward results.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput<T> {
    /// `[N, C, H, W]`
    pub decoupled: Tensor<T>,
    /// `[N, K]`
    pub goodness: Tensor<T>,
    /// `[N, E]`
    pub embeddings: Tensor<T>,
    /// Spatial means of the post-ReLU activations, `[N, C]`.
    pub pooled_preact: Tensor<T>,
    /// Spatial means of the decoupled features, `[N, C]`.
    pub pooled_decoupled: Tensor<T>,
}

#[derive(Clone, Copy)]
struct Dims {
    conv: ConvDims,
    classes: usize,
    channels: usize,
    pixels: usize,
    embed: usize,
}

impl Dims {
    fn resolve(config: &LayerConfig, sample_shape: &[usize]) -> Result<Self> {
        let conv = ConvDims::resolve(
            sample_shape,
            &[config.out_channels, config.in_channels, config.kernel, config.kernel],
            config.geometry(),
        )?;
        Ok(Dims {
            conv,
            classes: config.num_classes,
            channels: config.out_channels,
            pixels: conv.out_pixels(),
            embed: config.embed_dim,
        })
    }

    fn act_len(&self) -> usize {
        self.channels * self.pixels
    }

    /// Elements in one class subset.
    fn subset_len(&self) -> usize {
        self.act_len() / self.classes
    }
}

/// Per-sample forward buffers.
struct SampleOut<'a, T> {
    act: &'a mut [T],
    dec: &'a mut [T],
    goodness: &'a mut [T],
    pooled_act: &'a mut [T],
    pooled_dec: &'a mut [T],
    embedding: &'a mut [T],
}

fn channel_means<T: Real>(x: &[T], pixels: usize, out: &mut [T]) {
    for (o, plane) in out.iter_mut().zip(x.chunks_exact(pixels)) {
        *o = T::of(plane.iter().map(|v| v.f64()).sum::<f64>() / pixels as f64);
    }
}

fn sample_forward<T: Real>(layer: &LayerState<T>, d: &Dims, x: &[T], col: &mut [T], out: SampleOut<'_, T>) {
    let cfg = &layer.config;
    conv2d_raw(
        x,
        layer.conv_weights.value.data(),
        layer.conv_bias.value.data(),
        &d.conv,
        col,
        out.act,
    );
    for v in out.act.iter_mut() {
        if *v <= T::zero() {
            *v = T::zero();
        }
    }
    match cfg.mode {
        GoodnessMode::Mean => {
            let mut stds = vec![T::zero(); d.classes];
            group_norm_raw(out.act, d.classes, cfg.norm_eps, out.dec, out.goodness, &mut stds);
        }
        GoodnessMode::SumSquares => {
            for (g, sub) in out.goodness.iter_mut().zip(out.act.chunks_exact(d.subset_len())) {
                let ss = sub.iter().map(|v| v.f64() * v.f64()).sum::<f64>();
                *g = T::of(ss / sub.len() as f64);
            }
            length_norm_raw(out.act, cfg.norm_eps, out.dec);
        }
    }
    channel_means(out.act, d.pixels, out.pooled_act);
    channel_means(out.dec, d.pixels, out.pooled_dec);
    out.embedding.copy_from_slice(layer.proj_bias.value.data());
    linear_raw(out.pooled_dec, layer.proj_weights.value.data(), out.embedding);
}

/// Single-sample forward pass: convolution, ReLU, per-class goodness,
/// decoupling and projection.
pub fn cw_conv_forward<T: Real>(layer: &LayerState<T>, input: &Tensor<T>) -> Result<LayerOutput<T>> {
    input.check_finite("layer input")?;
    let d = Dims::resolve(&layer.config, input.shape())?;
    let mut col = vec![T::zero(); d.conv.col_len()];
    let mut act = vec![T::zero(); d.act_len()];
    let mut dec = vec![T::zero(); d.act_len()];
    let mut goodness = vec![T::zero(); d.classes];
    let mut pooled_act = vec![T::zero(); d.channels];
    let mut pooled_dec = vec![T::zero(); d.channels];
    let mut embedding = vec![T::zero(); d.embed];
    sample_forward(
        layer,
        &d,
        input.data(),
        &mut col,
        SampleOut {
            act: &mut act,
            dec: &mut dec,
            goodness: &mut goodness,
            pooled_act: &mut pooled_act,
            pooled_dec: &mut pooled_dec,
            embedding: &mut embedding,
        },
    );
    let shape = d.conv.output_shape();
    Ok(LayerOutput {
        preact: Tensor::from_vec(&shape, act)?,
        goodness,
        decoupled: Tensor::from_vec(&shape, dec)?,
        embedding: Tensor::from_vec(&[d.embed], embedding)?,
    })
}

/// Forward results for a batch, with the post-ReLU activations kept for the
/// backward pass.
struct ForwardCache<T> {
    out: BatchOutput<T>,
    act: Vec<T>,
}

fn batch_dims<T: Real>(layer: &LayerState<T>, input: &Tensor<T>) -> Result<(usize, Dims)> {
    input.expect_ndim(4, "layer input batch")?;
    input.check_finite("layer input batch")?;
    let n = input.shape()[0];
    if n == 0 {
        return Err(arg_err!("empty batch"));
    }
    Ok((n, Dims::resolve(&layer.config, &input.shape()[1..])?))
}

fn forward_cached<T: Real>(layer: &LayerState<T>, input: &Tensor<T>) -> Result<ForwardCache<T>> {
    let (n, d) = batch_dims(layer, input)?;
    let (al, k, c, e) = (d.act_len(), d.classes, d.channels, d.embed);
    struct Chunk<T> {
        act: Vec<T>,
        dec: Vec<T>,
        good: Vec<T>,
        pact: Vec<T>,
        pdec: Vec<T>,
        emb: Vec<T>,
    }
    let chunks: Vec<Chunk<T>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let (lo, hi) = (ci * CHUNK, ((ci + 1) * CHUNK).min(n));
            let m = hi - lo;
            let mut col = vec![T::zero(); d.conv.col_len()];
            let mut ch = Chunk {
                act: vec![T::zero(); m * al],
                dec: vec![T::zero(); m * al],
                good: vec![T::zero(); m * k],
                pact: vec![T::zero(); m * c],
                pdec: vec![T::zero(); m * c],
                emb: vec![T::zero(); m * e],
            };
            for s in 0..m {
                sample_forward(
                    layer,
                    &d,
                    input.slice0(lo + s),
                    &mut col,
                    SampleOut {
                        act: &mut ch.act[s * al..(s + 1) * al],
                        dec: &mut ch.dec[s * al..(s + 1) * al],
                        goodness: &mut ch.good[s * k..(s + 1) * k],
                        pooled_act: &mut ch.pact[s * c..(s + 1) * c],
                        pooled_dec: &mut ch.pdec[s * c..(s + 1) * c],
                        embedding: &mut ch.emb[s * e..(s + 1) * e],
                    },
                );
            }
            ch
        })
        .collect();

    let mut act = Vec::with_capacity(n * al);
    let mut dec = Vec::with_capacity(n * al);
    let mut good = Vec::with_capacity(n * k);
    let mut pact = Vec::with_capacity(n * c);
    let mut pdec = Vec::with_capacity(n * c);
    let mut emb = Vec::with_capacity(n * e);
    for ch in chunks {
        act.extend(ch.act);
        dec.extend(ch.dec);
        good.extend(ch.good);
        pact.extend(ch.pact);
        pdec.extend(ch.pdec);
        emb.extend(ch.emb);
    }
    let [_, oh, ow] = d.conv.output_shape();
    Ok(ForwardCache {
        out: BatchOutput {
            decoupled: Tensor::from_vec(&[n, c, oh, ow], dec)?,
            goodness: Tensor::from_vec(&[n, k], good)?,
            embeddings: Tensor::from_vec(&[n, e], emb)?,
            pooled_preact: Tensor::from_vec(&[n, c], pact)?,
            pooled_decoupled: Tensor::from_vec(&[n, c], pdec)?,
        },
        act,
    })
}

/// Batched forward pass `[N, Cin, H, W] -> BatchOutput`.
pub fn forward_batch<T: Real>(layer: &LayerState<T>, input: &Tensor<T>) -> Result<BatchOutput<T>> {
    Ok(forward_cached(layer, input)?.out)
}

/// Settings of the local objective for one update.
#[derive(Debug, Clone, Copy)]
pub struct LocalObjective<'a> {
    pub partition: &'a SuperClassPartition,
    /// Weight of the contrastive term.
    pub lambda: f64,
    /// Contrastive temperature.
    pub tau: f64,
    pub reduction: SupconReduction,
}

/// Loss components of one local update, averaged as they enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub hier: f64,
    pub con: f64,
    pub total: f64,
    /// Samples whose fine-class goodness argmax equals the label.
    pub correct: usize,
    pub samples: usize,
}

/// Gradients of the local objective with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub conv_weights: Tensor<T>,
    pub conv_bias: Tensor<T>,
    pub proj_weights: Tensor<T>,
    pub proj_bias: Tensor<T>,
}

impl<T: Real> LayerGrads<T> {
    fn zeros(cfg: &LayerConfig) -> Self {
        LayerGrads {
            conv_weights: Tensor::zeros(&[cfg.out_channels, cfg.in_channels, cfg.kernel, cfg.kernel]),
            conv_bias: Tensor::zeros(&[cfg.out_channels]),
            proj_weights: Tensor::zeros(&[cfg.embed_dim, cfg.out_channels]),
            proj_bias: Tensor::zeros(&[cfg.embed_dim]),
        }
    }

    fn tensors(&self) -> [&Tensor<T>; 4] {
        [
            &self.conv_weights,
            &self.conv_bias,
            &self.proj_weights,
            &self.proj_bias,
        ]
    }

    fn accumulate(&mut self, other: &LayerGrads<T>) {
        for (a, b) in [
            (&mut self.conv_weights, &other.conv_weights),
            (&mut self.conv_bias, &other.conv_bias),
            (&mut self.proj_weights, &other.proj_weights),
            (&mut self.proj_bias, &other.proj_bias),
        ] {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + y;
            }
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn sample_backward<T: Real>(
    layer: &LayerState<T>,
    d: &Dims,
    x: &[T],
    act: &[T],
    pooled_dec: &[T],
    dgood: &[T],
    demb: Option<&[T]>,
    col: &mut [T],
    dz: &mut [T],
    da: &mut [T],
    dpool: &mut [T],
    grads: &mut LayerGrads<T>,
) {
    let cfg = &layer.config;
    let sub = d.subset_len();
    match demb {
        Some(dh) => {
            for (g, &v) in grads.proj_bias.data_mut().iter_mut().zip(dh) {
                *g = *g + v;
            }
            linear_backward_raw(
                pooled_dec,
                layer.proj_weights.value.data(),
                dh,
                grads.proj_weights.data_mut(),
                dpool,
            );
            let inv = T::of(1.0 / d.pixels as f64);
            for (plane, &g) in dz.chunks_exact_mut(d.pixels).zip(dpool.iter()) {
                plane.fill(g * inv);
            }
            match cfg.mode {
                GoodnessMode::Mean => group_norm_backward_raw(act, dz, d.classes, cfg.norm_eps, da),
                GoodnessMode::SumSquares => length_norm_backward_raw(act, dz, cfg.norm_eps, da),
            }
        }
        None => da.fill(T::zero()),
    }
    let inv_sub = T::of(1.0 / sub as f64);
    for ((dsub, asub), &g) in da
        .chunks_exact_mut(sub)
        .zip(act.chunks_exact(sub))
        .zip(dgood)
    {
        match cfg.mode {
            GoodnessMode::Mean => {
                let share = g * inv_sub;
                for v in dsub.iter_mut() {
                    *v = *v + share;
                }
            }
            GoodnessMode::SumSquares => {
                let share = T::of(2.0) * g * inv_sub;
                for (v, &a) in dsub.iter_mut().zip(asub) {
                    *v = *v + share * a;
                }
            }
        }
    }
    for (v, &a) in da.iter_mut().zip(act) {
        if a <= T::zero() {
            *v = T::zero();
        }
    }
    im2col(x, &d.conv, col);
    conv2d_param_grads_raw(
        col,
        da,
        &d.conv,
        grads.conv_weights.data_mut(),
        grads.conv_bias.data_mut(),
    );
}

/// Local objective value and parameter gradients for one batch. `input` is
/// treated as a constant. Also returns the forward results, computed with the
/// current (pre-update) parameters.
///
/// The objective is the batch mean of the per-sample hierarchical CwC loss
/// plus `lambda` times the contrastive loss divided by the batch size (or by
/// the number of anchors with a positive). Batches with a single sample carry
/// no contrastive term.
pub fn local_loss_and_grads<T: Real>(
    layer: &LayerState<T>,
    input: &Tensor<T>,
    labels: &[usize],
    objective: &LocalObjective<'_>,
) -> Result<(LossReport, LayerGrads<T>, BatchOutput<T>)> {
    let (n, d) = batch_dims(layer, input)?;
    if labels.len() != n {
        return Err(arg_err!("batch of {n} samples but {} labels", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= d.classes) {
        return Err(arg_err!("label {bad} out of range for {} classes", d.classes));
    }
    if objective.partition.num_classes() != d.classes {
        return Err(arg_err!(
            "partition covers {} classes, layer has {}",
            objective.partition.num_classes(),
            d.classes
        ));
    }
    if !(objective.lambda >= 0.0) {
        return Err(arg_err!("contrastive weight must be non-negative"));
    }

    let cache = forward_cached(layer, input)?;
    let out = &cache.out;
    let k = d.classes;

    let inv_n = 1.0 / n as f64;
    let mut hier_sum = 0.0;
    let mut correct = 0;
    let mut dgood = vec![T::zero(); n * k];
    for i in 0..n {
        let g = out.goodness.slice0(i);
        let (loss, grad) = hiercwc_loss(g, labels[i], objective.partition)?;
        hier_sum += loss.f64();
        for (dst, gv) in dgood[i * k..(i + 1) * k].iter_mut().zip(grad) {
            *dst = gv * T::of(inv_n);
        }
        if argmax(g) == labels[i] {
            correct += 1;
        }
    }
    let hier = hier_sum * inv_n;

    let mut con = 0.0;
    let mut demb: Option<Tensor<T>> = None;
    if objective.lambda > 0.0 && n >= 2 {
        let (sum, grad, valid) = supcon_loss(&out.embeddings, labels, objective.tau)?;
        let denom = match objective.reduction {
            SupconReduction::Sum => n as f64,
            SupconReduction::MeanOverValidAnchors => valid.max(1) as f64,
        };
        con = sum.f64() / denom;
        demb = Some(grad.scale(T::of(objective.lambda / denom)));
    }
    let total = hier + objective.lambda * con;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "layer {}: non-finite local loss (hier {hier}, con {con})",
            layer.index
        )));
    }

    let al = d.act_len();
    let partials: Vec<LayerGrads<T>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let (lo, hi) = (ci * CHUNK, ((ci + 1) * CHUNK).min(n));
            let mut grads = LayerGrads::zeros(&layer.config);
            let mut col = vec![T::zero(); d.conv.col_len()];
            let mut dz = vec![T::zero(); al];
            let mut da = vec![T::zero(); al];
            let mut dpool = vec![T::zero(); d.channels];
            for i in lo..hi {
                sample_backward(
                    layer,
                    &d,
                    input.slice0(i),
                    &cache.act[i * al..(i + 1) * al],
                    out.pooled_decoupled.slice0(i),
                    &dgood[i * k..(i + 1) * k],
                    demb.as_ref().map(|t| t.slice0(i)),
                    &mut col,
                    &mut dz,
                    &mut da,
                    &mut dpool,
                    &mut grads,
                );
            }
            grads
        })
        .collect();
    let mut grads = LayerGrads::zeros(&layer.config);
    for p in &partials {
        grads.accumulate(p);
    }

    let report = LossReport {
        hier,
        con,
        total,
        correct,
        samples: n,
    };
    Ok((report, grads, cache.out))
}

/// One Adam step on every parameter of the layer.
pub fn apply_grads<T: Real>(layer: &mut LayerState<T>, grads: &LayerGrads<T>, lr: f64) -> Result<()> {
    for (g, name) in grads.tensors().iter().zip(PARAM_NAMES) {
        g.check_finite(&format!("layer {} {name} gradient", layer.index))?;
    }
    let tensors = grads.tensors();
    for (p, g) in layer.params_mut().into_iter().zip(tensors) {
        adam_step(&mut p.value, g, &mut p.adam, lr)?;
    }
    Ok(())
}

/// Computes the local objective, updates the layer's parameters once, and
/// returns the losses together with the features computed before the update.
pub fn cw_conv_local_update<T: Real>(
    layer: &mut LayerState<T>,
    input: &Tensor<T>,
    labels: &[usize],
    objective: &LocalObjective<'_>,
    lr: f64,
) -> Result<(LossReport, BatchOutput<T>)> {
    let (report, grads, out) = local_loss_and_grads(layer, input, labels, objective)?;
    apply_grads(layer, &grads, lr)?;
    Ok((report, out))
}
