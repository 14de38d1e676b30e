//! Pooling and the dense affine map, with their backward passes.

use super::tensor::{Real, Tensor};
use crate::error::{arg_err, Result};

fn chw<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    t.expect_ndim(3, what)?;
    let s = t.shape();
    Ok((s[0], s[1], s[2]))
}

/// Mean over the spatial axes: `[C,H,W] -> [C]`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input, "global_avg_pool")?;
    let hw = h * w;
    let inv = T::of(1.0 / hw as f64);
    let data = (0..c)
        .map(|ch| input.data()[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(&[c], data)
}

pub fn global_avg_pool_backward<T: Real>(
    input_shape: &[usize],
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if input_shape.len() != 3 {
        return Err(arg_err!("global_avg_pool_backward expects [C,H,W] input shape"));
    }
    let (c, hw) = (input_shape[0], input_shape[1] * input_shape[2]);
    grad_output.expect_shape(&[c], "global_avg_pool_backward")?;
    let inv = T::of(1.0 / hw as f64);
    let mut out = Tensor::zeros(input_shape);
    for ch in 0..c {
        out.data_mut()[ch * hw..(ch + 1) * hw].fill(grad_output.data()[ch] * inv);
    }
    Ok(out)
}

/// 2x2 average pooling with stride 2. `H` and `W` must be even.
pub fn avg_pool_2x2<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input, "avg_pool_2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(arg_err!("avg_pool_2x2 needs even H and W, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let x = input.data();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let o = out.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = (ch * h + 2 * y) * w + 2 * xo;
                o[(ch * oh + y) * ow + xo] =
                    (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]) * quarter;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool_2x2_backward<T: Real>(
    input_shape: &[usize],
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if input_shape.len() != 3 || !input_shape[1].is_multiple_of(2) || !input_shape[2].is_multiple_of(2) {
        return Err(arg_err!(
            "avg_pool_2x2_backward needs [C,H,W] with even H and W, got {:?}",
            input_shape
        ));
    }
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    grad_output.expect_shape(&[c, oh, ow], "avg_pool_2x2_backward")?;
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(input_shape);
    let g = grad_output.data();
    let o = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                o[(ch * h + y) * w + x] = g[(ch * oh + y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    Ok(out)
}

/// `W x + b` with `W: [Dout, Din]`.
pub fn linear<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    input.expect_ndim(1, "linear input")?;
    weights.expect_ndim(2, "linear weights")?;
    let (dout, din) = (weights.shape()[0], weights.shape()[1]);
    input.expect_shape(&[din], "linear input")?;
    bias.expect_shape(&[dout], "linear bias")?;
    let mut out = bias.clone();
    linear_raw(input.data(), weights.data(), out.data_mut());
    Ok(out)
}

/// `out += W x` for row-major `W` with `out.len()` rows.
pub(crate) fn linear_raw<T: Real>(x: &[T], w: &[T], out: &mut [T]) {
    let din = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(din)) {
        *o = row.iter().zip(x).fold(*o, |acc, (&a, &b)| acc + a * b);
    }
}

/// Gradients of a [`linear`] call.
#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    weights.expect_ndim(2, "linear_backward weights")?;
    let (dout, din) = (weights.shape()[0], weights.shape()[1]);
    input.expect_shape(&[din], "linear_backward input")?;
    grad_output.expect_shape(&[dout], "linear_backward grad_output")?;
    let mut gw = Tensor::zeros(&[dout, din]);
    let mut gi = Tensor::zeros(&[din]);
    linear_backward_raw(
        input.data(),
        weights.data(),
        grad_output.data(),
        gw.data_mut(),
        gi.data_mut(),
    );
    Ok(LinearGrads {
        weights: gw,
        bias: grad_output.clone(),
        input: gi,
    })
}

/// Accumulates `gw += g x^T` and overwrites `gx = W^T g`.
pub(crate) fn linear_backward_raw<T: Real>(x: &[T], w: &[T], g: &[T], gw: &mut [T], gx: &mut [T]) {
    let din = x.len();
    gx.fill(T::zero());
    for ((&go, wrow), gwrow) in g.iter().zip(w.chunks_exact(din)).zip(gw.chunks_exact_mut(din)) {
        for ((gwv, &xv), (gxv, &wv)) in gwrow.iter_mut().zip(x).zip(gx.iter_mut().zip(wrow)) {
            *gwv = *gwv + go * xv;
            *gxv = *gxv + go * wv;
        }
    }
}
