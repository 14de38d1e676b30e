//! Activation and normalization primitives.
//!
//! Group statistics are accumulated in `f64` regardless of the element type
//! and in index order, so `f32` outputs have centred means well below the
//! element rounding error.

use super::tensor::{Real, Tensor};
use crate::error::{arg_err, Result};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes `grad_output` where `input > 0`; the gradient at exactly zero is 0.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    grad_output.expect_shape(input.shape(), "relu_backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Result of [`group_norm`].
#[derive(Debug, Clone)]
pub struct GroupNormOutput<T> {
    pub decoupled: Tensor<T>,
    pub mean: Tensor<T>,
    /// `sqrt(var + eps)` per group.
    pub std: Tensor<T>,
}

fn group_stats<T: Real>(group: &[T]) -> (f64, f64) {
    let n = group.len() as f64;
    let mean = group.iter().map(|x| x.f64()).sum::<f64>() / n;
    let var = group
        .iter()
        .map(|x| {
            let d = x.f64() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var)
}

/// Normalizes each contiguous group of `x` (groups of equal length) to zero
/// mean and unit variance. Writes per-group mean and std.
pub(crate) fn group_norm_raw<T: Real>(
    x: &[T],
    groups: usize,
    eps: f64,
    out: &mut [T],
    means: &mut [T],
    stds: &mut [T],
) {
    let len = x.len() / groups;
    for g in 0..groups {
        let src = &x[g * len..(g + 1) * len];
        let (mean, var) = group_stats(src);
        let std = (var + eps).sqrt();
        for (o, &v) in out[g * len..(g + 1) * len].iter_mut().zip(src) {
            *o = T::of((v.f64() - mean) / std);
        }
        means[g] = T::of(mean);
        stds[g] = T::of(std);
    }
}

/// Backward of [`group_norm_raw`]; `grad_x` is overwritten.
pub(crate) fn group_norm_backward_raw<T: Real>(
    x: &[T],
    grad_out: &[T],
    groups: usize,
    eps: f64,
    grad_x: &mut [T],
) {
    let len = x.len() / groups;
    let n = len as f64;
    for g in 0..groups {
        let range = g * len..(g + 1) * len;
        let src = &x[range.clone()];
        let gy = &grad_out[range.clone()];
        let (mean, var) = group_stats(src);
        let std = (var + eps).sqrt();
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for (&v, &d) in src.iter().zip(gy) {
            let xh = (v.f64() - mean) / std;
            sum_g += d.f64();
            sum_gx += d.f64() * xh;
        }
        let (mean_g, mean_gx) = (sum_g / n, sum_gx / n);
        for ((gx, &v), &d) in grad_x[range].iter_mut().zip(src).zip(gy) {
            let xh = (v.f64() - mean) / std;
            *gx = T::of((d.f64() - mean_g - xh * mean_gx) / std);
        }
    }
}

fn check_groups<T: Real>(activations: &Tensor<T>, eps: f64) -> Result<usize> {
    if activations.ndim() < 2 {
        return Err(arg_err!(
            "group_norm expects [groups, ...], got {:?}",
            activations.shape()
        ));
    }
    if !(eps > 0.0) {
        return Err(arg_err!("group_norm eps must be positive, got {eps}"));
    }
    let groups = activations.shape()[0];
    let per_group = activations.len() / groups.max(1);
    if groups == 0 || per_group < 2 {
        return Err(arg_err!(
            "group_norm needs at least 2 elements per group, shape {:?}",
            activations.shape()
        ));
    }
    Ok(groups)
}

/// Parameter-free group normalization. Each slice along the leading axis
/// (for example `[K, C', H, W]`) is one group.
pub fn group_norm<T: Real>(activations: &Tensor<T>, eps: f64) -> Result<GroupNormOutput<T>> {
    let groups = check_groups(activations, eps)?;
    activations.check_finite("group_norm input")?;
    let mut decoupled = Tensor::zeros(activations.shape());
    let mut mean = Tensor::zeros(&[groups]);
    let mut std = Tensor::zeros(&[groups]);
    group_norm_raw(
        activations.data(),
        groups,
        eps,
        decoupled.data_mut(),
        mean.data_mut(),
        std.data_mut(),
    );
    Ok(GroupNormOutput {
        decoupled,
        mean,
        std,
    })
}

/// Exact gradient of [`group_norm`], including the dependence of the group
/// mean and variance on the inputs.
pub fn group_norm_backward<T: Real>(
    activations: &Tensor<T>,
    grad_output: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let groups = check_groups(activations, eps)?;
    grad_output.expect_shape(activations.shape(), "group_norm_backward")?;
    let mut grad = Tensor::zeros(activations.shape());
    group_norm_backward_raw(
        activations.data(),
        grad_output.data(),
        groups,
        eps,
        grad.data_mut(),
    );
    Ok(grad)
}

/// Vector-length normalization `y / sqrt(mean(y^2) + eps)` over the whole
/// slice. Returns the normalizer.
pub(crate) fn length_norm_raw<T: Real>(y: &[T], eps: f64, out: &mut [T]) -> f64 {
    let n = y.len() as f64;
    let ms = y.iter().map(|v| v.f64() * v.f64()).sum::<f64>() / n;
    let r = (ms + eps).sqrt();
    for (o, &v) in out.iter_mut().zip(y) {
        *o = T::of(v.f64() / r);
    }
    r
}

pub(crate) fn length_norm_backward_raw<T: Real>(y: &[T], grad_out: &[T], eps: f64, grad_y: &mut [T]) {
    let n = y.len() as f64;
    let ms = y.iter().map(|v| v.f64() * v.f64()).sum::<f64>() / n;
    let r = (ms + eps).sqrt();
    let dot: f64 = y.iter().zip(grad_out).map(|(a, b)| a.f64() * b.f64()).sum();
    let k = dot / (n * r * r * r);
    for ((gy, &v), &d) in grad_y.iter_mut().zip(y).zip(grad_out) {
        *gy = T::of(d.f64() / r - v.f64() * k);
    }
}

/// Whole-tensor vector-length normalization, the decoupling used with
/// sum-of-squares goodness.
pub fn length_norm<T: Real>(y: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if y.is_empty() {
        return Err(arg_err!("length_norm of an empty tensor"));
    }
    y.check_finite("length_norm input")?;
    let mut out = Tensor::zeros(y.shape());
    length_norm_raw(y.data(), eps, out.data_mut());
    Ok(out)
}

pub fn length_norm_backward<T: Real>(
    y: &Tensor<T>,
    grad_output: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    grad_output.expect_shape(y.shape(), "length_norm_backward")?;
    let mut grad = Tensor::zeros(y.shape());
    length_norm_backward_raw(y.data(), grad_output.data(), eps, grad.data_mut());
    Ok(grad)
}
