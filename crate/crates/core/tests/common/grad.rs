//! Finite-difference oracles for every backward pass, at 64-bit.

use hclff::layers::{local_loss_and_grads, GoodnessMode, LayerConfig, LayerState, LocalObjective};
use hclff::numerics::{
    avg_pool_2x2, avg_pool_2x2_backward, conv2d, conv2d_backward, global_avg_pool,
    global_avg_pool_backward, group_norm, group_norm_backward, length_norm, length_norm_backward,
    linear, linear_backward, relu, relu_backward, AdamConfig, ConvGeometry,
};
use hclff::objectives::{cwc_loss, hiercwc_loss, supcon_loss, SuperClassPartition, SupconReduction};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    away_from_zero, dot, numeric_grad, rel_err, rng, uniform, COMPOSITE_TOL, INSTANCES,
    PRIMITIVE_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Conv,
    Relu,
    GroupNorm,
    LengthNorm,
    AvgPool,
    GlobalPool,
    Linear,
    Cwc,
    HierCwc,
    Supcon,
    LocalGraph,
}

impl Family {
    pub const ALL: [Family; 11] = [
        Family::Conv,
        Family::Relu,
        Family::GroupNorm,
        Family::LengthNorm,
        Family::AvgPool,
        Family::GlobalPool,
        Family::Linear,
        Family::Cwc,
        Family::HierCwc,
        Family::Supcon,
        Family::LocalGraph,
    ];

    pub fn tolerance(self) -> f64 {
        match self {
            Family::LocalGraph => COMPOSITE_TOL,
            _ => PRIMITIVE_TOL,
        }
    }

    /// Relative error of every gradient checked in each random instance.
    pub fn errors(self) -> Vec<f64> {
        (0..INSTANCES)
            .map(|i| {
                let mut r = rng(1000 * self as u64 + i);
                match self {
                    Family::Conv => conv(&mut r),
                    Family::Relu => relu_case(&mut r),
                    Family::GroupNorm => group_norm_case(&mut r),
                    Family::LengthNorm => length_norm_case(&mut r),
                    Family::AvgPool => avg_pool_case(&mut r),
                    Family::GlobalPool => global_pool_case(&mut r),
                    Family::Linear => linear_case(&mut r),
                    Family::Cwc => cwc_case(&mut r),
                    Family::HierCwc => hiercwc_case(&mut r),
                    Family::Supcon => supcon_case(&mut r),
                    Family::LocalGraph => local_graph_case(&mut r, i),
                }
            })
            .collect()
    }
}

pub fn worst(errors: &[f64]) -> f64 {
    errors.iter().copied().fold(0.0, f64::max)
}

fn conv(r: &mut ChaCha8Rng) -> f64 {
    let (cin, cout) = (r.random_range(1..4), r.random_range(1..4));
    let k = if r.random_bool(0.5) { 1 } else { 3 };
    let geom = ConvGeometry::new(r.random_range(1..3), r.random_range(0..2));
    let (h, w) = (r.random_range(3..7), r.random_range(3..7));
    let x = uniform(&[cin, h, w], -1.0, 1.0, r);
    let wt = uniform(&[cout, cin, k, k], -1.0, 1.0, r);
    let b = uniform(&[cout], -1.0, 1.0, r);
    let out_shape = conv2d(&x, &wt, &b, geom).unwrap().shape().to_vec();
    let weight = uniform(&out_shape, -1.0, 1.0, r);
    let g = conv2d_backward(&x, &wt, &weight, geom).unwrap();
    let nx = numeric_grad(&x, |p| dot(&conv2d(p, &wt, &b, geom).unwrap(), &weight));
    let nw = numeric_grad(&wt, |p| dot(&conv2d(&x, p, &b, geom).unwrap(), &weight));
    let nb = numeric_grad(&b, |p| dot(&conv2d(&x, &wt, p, geom).unwrap(), &weight));
    rel_err(g.input.data(), &nx)
        .max(rel_err(g.weights.data(), &nw))
        .max(rel_err(g.bias.data(), &nb))
}

fn relu_case(r: &mut ChaCha8Rng) -> f64 {
    let x = away_from_zero(&[r.random_range(1..40)], 0.05, 2.0, r);
    let weight = uniform(x.shape(), -1.0, 1.0, r);
    let g = relu_backward(&x, &weight).unwrap();
    rel_err(g.data(), &numeric_grad(&x, |p| dot(&relu(p), &weight)))
}

fn group_norm_case(r: &mut ChaCha8Rng) -> f64 {
    let shape = [r.random_range(1..5), r.random_range(2..4), r.random_range(1..4), r.random_range(1..4)];
    let x = uniform(&shape, -2.0, 2.0, r);
    let weight = uniform(&shape, -1.0, 1.0, r);
    let eps = 1e-5;
    let g = group_norm_backward(&x, &weight, eps).unwrap();
    let n = numeric_grad(&x, |p| dot(&group_norm(p, eps).unwrap().decoupled, &weight));
    rel_err(g.data(), &n)
}

fn length_norm_case(r: &mut ChaCha8Rng) -> f64 {
    let shape = [r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)];
    let y = uniform(&shape, 0.0, 2.0, r);
    let weight = uniform(&shape, -1.0, 1.0, r);
    let eps = 1e-5;
    let g = length_norm_backward(&y, &weight, eps).unwrap();
    rel_err(g.data(), &numeric_grad(&y, |p| dot(&length_norm(p, eps).unwrap(), &weight)))
}

fn avg_pool_case(r: &mut ChaCha8Rng) -> f64 {
    let shape = [r.random_range(1..4), 2 * r.random_range(1..4), 2 * r.random_range(1..4)];
    let x = uniform(&shape, -1.0, 1.0, r);
    let weight = uniform(&[shape[0], shape[1] / 2, shape[2] / 2], -1.0, 1.0, r);
    let g = avg_pool_2x2_backward(&shape, &weight).unwrap();
    rel_err(g.data(), &numeric_grad(&x, |p| dot(&avg_pool_2x2(p).unwrap(), &weight)))
}

fn global_pool_case(r: &mut ChaCha8Rng) -> f64 {
    let shape = [r.random_range(1..5), r.random_range(1..5), r.random_range(1..5)];
    let x = uniform(&shape, -1.0, 1.0, r);
    let weight = uniform(&[shape[0]], -1.0, 1.0, r);
    let g = global_avg_pool_backward(&shape, &weight).unwrap();
    rel_err(g.data(), &numeric_grad(&x, |p| dot(&global_avg_pool(p).unwrap(), &weight)))
}

fn linear_case(r: &mut ChaCha8Rng) -> f64 {
    let (din, dout) = (r.random_range(1..8), r.random_range(1..8));
    let x = uniform(&[din], -1.0, 1.0, r);
    let wt = uniform(&[dout, din], -1.0, 1.0, r);
    let b = uniform(&[dout], -1.0, 1.0, r);
    let weight = uniform(&[dout], -1.0, 1.0, r);
    let g = linear_backward(&x, &wt, &weight).unwrap();
    let nx = numeric_grad(&x, |p| dot(&linear(p, &wt, &b).unwrap(), &weight));
    let nw = numeric_grad(&wt, |p| dot(&linear(&x, p, &b).unwrap(), &weight));
    let nb = numeric_grad(&b, |p| dot(&linear(&x, &wt, p).unwrap(), &weight));
    rel_err(g.input.data(), &nx)
        .max(rel_err(g.weights.data(), &nw))
        .max(rel_err(g.bias.data(), &nb))
}

fn cwc_case(r: &mut ChaCha8Rng) -> f64 {
    let k = r.random_range(2..12);
    let goodness = uniform(&[k], -3.0, 3.0, r);
    let label = r.random_range(0..k);
    let (_, g) = cwc_loss(goodness.data(), label).unwrap();
    rel_err(&g, &numeric_grad(&goodness, |p| cwc_loss(p.data(), label).unwrap().0))
}

/// Random partition of `0..k` into between 1 and `k` non-empty groups.
pub fn random_partition(k: usize, level: usize, r: &mut ChaCha8Rng) -> SuperClassPartition {
    let mut classes: Vec<usize> = (0..k).collect();
    classes.shuffle(r);
    let groups = r.random_range(1..=k);
    let mut cuts: Vec<usize> = (1..k).collect();
    cuts.shuffle(r);
    let mut cuts: Vec<usize> = cuts[..groups - 1].to_vec();
    cuts.sort_unstable();
    cuts.push(k);
    let mut out = Vec::with_capacity(groups);
    let mut start = 0;
    for end in cuts {
        let mut g = classes[start..end].to_vec();
        g.sort_unstable();
        out.push(g);
        start = end;
    }
    SuperClassPartition::new(out, k, level).unwrap()
}

fn hiercwc_case(r: &mut ChaCha8Rng) -> f64 {
    let k = r.random_range(2..12);
    let partition = random_partition(k, 1, r);
    let goodness = uniform(&[k], -3.0, 3.0, r);
    let label = r.random_range(0..k);
    let (_, g) = hiercwc_loss(goodness.data(), label, &partition).unwrap();
    let n = numeric_grad(&goodness, |p| hiercwc_loss(p.data(), label, &partition).unwrap().0);
    rel_err(&g, &n)
}

fn supcon_case(r: &mut ChaCha8Rng) -> f64 {
    let (n, e) = (r.random_range(2..8), r.random_range(2..6));
    let emb = uniform(&[n, e], -1.0, 1.0, r);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
    let tau = r.random_range(0.1..1.0);
    let (_, g, _) = supcon_loss(&emb, &labels, tau).unwrap();
    rel_err(g.data(), &numeric_grad(&emb, |p| supcon_loss(p, &labels, tau).unwrap().0))
}

fn local_graph_case(r: &mut ChaCha8Rng, instance: u64) -> f64 {
    let k = r.random_range(2..4);
    let cfg = LayerConfig {
        in_channels: r.random_range(1..3),
        out_channels: k * r.random_range(1..3),
        num_classes: k,
        kernel: 3,
        stride: r.random_range(1..3),
        embed_dim: r.random_range(2..5),
        mode: if instance.is_multiple_of(2) {
            GoodnessMode::Mean
        } else {
            GoodnessMode::SumSquares
        },
        norm_eps: 1e-5,
        hierarchy_level: 1,
    };
    let mut layer = LayerState::<f64>::new(0, cfg, AdamConfig::default(), instance).unwrap();
    layer.conv_bias.value = uniform(&[cfg.out_channels], 0.0, 0.3, r);
    layer.proj_bias.value = uniform(&[cfg.embed_dim], -0.5, 0.5, r);
    let n = r.random_range(2..6);
    let side = r.random_range(3..6);
    let input = uniform(&[n, cfg.in_channels, side, side], -1.0, 1.0, r);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    let partition = random_partition(k, 1, r);
    let objective = LocalObjective {
        partition: &partition,
        lambda: [0.0, 0.5, 1.0][r.random_range(0..3)],
        tau: r.random_range(0.1..1.0),
        reduction: if r.random_bool(0.5) {
            SupconReduction::Sum
        } else {
            SupconReduction::MeanOverValidAnchors
        },
    };
    let (_, grads, _) = local_loss_and_grads(&layer, &input, &labels, &objective).unwrap();
    let loss = |l: &LayerState<f64>| local_loss_and_grads(l, &input, &labels, &objective).unwrap().0.total;
    let analytic = [
        &grads.conv_weights,
        &grads.conv_bias,
        &grads.proj_weights,
        &grads.proj_bias,
    ];
    let mut worst: f64 = 0.0;
    for (p, a) in analytic.into_iter().enumerate() {
        let value = layer.params()[p].value.clone();
        let numeric = numeric_grad(&value, |v| {
            let mut probe = layer.clone();
            probe.params_mut()[p].value = v.clone();
            loss(&probe)
        });
        worst = worst.max(rel_err(a.data(), &numeric));
    }
    worst
}
