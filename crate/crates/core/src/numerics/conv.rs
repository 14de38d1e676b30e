//! 2-D convolution over a single `[C, H, W]` sample, lowered to GEMM via
//! im2col. Reductions inside the GEMM are performed by `matrixmultiply`,
//! whose summation order depends only on the operand shapes, so results are
//! bit-reproducible for fixed inputs.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{arg_err, Result};

/// Stride and zero-padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry { stride, padding }
    }

    /// Output extent along one spatial axis.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < kernel {
            return Err(arg_err!(
                "kernel {kernel} larger than padded input {padded}"
            ));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

/// Gradients of a convolution with respect to all three of its operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

/// Resolved shapes of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub geom: ConvGeometry,
}

impl ConvDims {
    pub fn resolve(input: &[usize], weights: &[usize], geom: ConvGeometry) -> Result<Self> {
        if input.len() != 3 {
            return Err(arg_err!("conv2d input must be [C,H,W], got {:?}", input));
        }
        if weights.len() != 4 {
            return Err(arg_err!(
                "conv2d weights must be [Cout,Cin,kh,kw], got {:?}",
                weights
            ));
        }
        let (cin, h, w) = (input[0], input[1], input[2]);
        let (cout, wcin, kh, kw) = (weights[0], weights[1], weights[2], weights[3]);
        if wcin != cin {
            return Err(arg_err!(
                "conv2d input has {cin} channels but weights expect {wcin}"
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(arg_err!("conv2d kernel must be odd, got {kh}x{kw}"));
        }
        if !(1..=2).contains(&geom.stride) {
            return Err(arg_err!("conv2d stride must be 1 or 2, got {}", geom.stride));
        }
        let oh = geom.output_extent(h, kh)?;
        let ow = geom.output_extent(w, kw)?;
        Ok(ConvDims {
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            geom,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    pub fn col_len(&self) -> usize {
        self.patch_len() * self.out_pixels()
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.cout, self.oh, self.ow]
    }
}

/// Unfolds `input` into a `[Cin*kh*kw, oh*ow]` patch matrix.
pub(crate) fn im2col<T: Real>(input: &[T], d: &ConvDims, col: &mut [T]) {
    let pixels = d.out_pixels();
    let (s, p) = (d.geom.stride as isize, d.geom.padding as isize);
    for c in 0..d.cin {
        let plane = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut col[row * pixels..(row + 1) * pixels];
                for oy in 0..d.oh {
                    let iy = oy as isize * s + ki as isize - p;
                    let dst_row = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in dst_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im<T: Real>(col: &[T], d: &ConvDims, grad_input: &mut [T]) {
    let pixels = d.out_pixels();
    let (s, p) = (d.geom.stride as isize, d.geom.padding as isize);
    grad_input.fill(T::zero());
    for c in 0..d.cin {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &col[row * pixels..(row + 1) * pixels];
                for oy in 0..d.oh {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for ox in 0..d.ow {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        let gi = (c * d.h + iy as usize) * d.w + ix as usize;
                        grad_input[gi] = grad_input[gi] + src[oy * d.ow + ox];
                    }
                }
            }
        }
    }
}

/// Convolution forward on raw slices; `col` must hold `d.col_len()` elements.
pub(crate) fn conv2d_raw<T: Real>(
    input: &[T],
    weights: &[T],
    bias: &[T],
    d: &ConvDims,
    col: &mut [T],
    out: &mut [T],
) {
    im2col(input, d, col);
    let (m, k, n) = (d.cout, d.patch_len(), d.out_pixels());
    for (o, &b) in bias.iter().enumerate() {
        out[o * n..(o + 1) * n].fill(b);
    }
    T::gemm(
        m,
        k,
        n,
        T::one(),
        weights,
        k as isize,
        1,
        col,
        n as isize,
        1,
        T::one(),
        out,
        n as isize,
        1,
    );
}

/// Accumulates weight and bias gradients into `gw`/`gb` for one sample.
/// `col` must already contain the sample's im2col matrix.
pub(crate) fn conv2d_param_grads_raw<T: Real>(
    col: &[T],
    grad_output: &[T],
    d: &ConvDims,
    gw: &mut [T],
    gb: &mut [T],
) {
    let (m, k, n) = (d.cout, d.patch_len(), d.out_pixels());
    // gw[Cout x K] += gout[Cout x P] * col^T[P x K]
    T::gemm(
        m,
        n,
        k,
        T::one(),
        grad_output,
        n as isize,
        1,
        col,
        1,
        n as isize,
        T::one(),
        gw,
        k as isize,
        1,
    );
    for (o, g) in gb.iter_mut().enumerate() {
        *g = grad_output[o * n..(o + 1) * n]
            .iter()
            .fold(*g, |acc, &x| acc + x);
    }
}

/// Cross-correlation with zero padding plus a per-output-channel bias.
///
/// `input` is `[Cin,H,W]`, `weights` is `[Cout,Cin,kh,kw]`, `bias` is `[Cout]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let d = ConvDims::resolve(input.shape(), weights.shape(), geom)?;
    bias.expect_shape(&[d.cout], "conv2d bias")?;
    input.check_finite("conv2d input")?;
    let mut col = vec![T::zero(); d.col_len()];
    let mut out = Tensor::zeros(&d.output_shape());
    conv2d_raw(
        input.data(),
        weights.data(),
        bias.data(),
        &d,
        &mut col,
        out.data_mut(),
    );
    Ok(out)
}

/// Exact gradients of `sum(conv2d(input) * grad_output)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<ConvGrads<T>> {
    let d = ConvDims::resolve(input.shape(), weights.shape(), geom)?;
    grad_output.expect_shape(&d.output_shape(), "conv2d_backward grad_output")?;
    let mut col = vec![T::zero(); d.col_len()];
    im2col(input.data(), &d, &mut col);

    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(&[d.cout]);
    conv2d_param_grads_raw(&col, grad_output.data(), &d, gw.data_mut(), gb.data_mut());

    // gcol[K x P] = W^T[K x Cout] * gout[Cout x P]
    let (m, k, n) = (d.cout, d.patch_len(), d.out_pixels());
    let mut gcol = vec![T::zero(); d.col_len()];
    T::gemm(
        k,
        m,
        n,
        T::one(),
        weights.data(),
        1,
        k as isize,
        grad_output.data(),
        n as isize,
        1,
        T::zero(),
        &mut gcol,
        n as isize,
        1,
    );
    let mut gi = Tensor::zeros(input.shape());
    col2im(&gcol, &d, gi.data_mut());
    Ok(ConvGrads {
        weights: gw,
        bias: gb,
        input: gi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn one_by_one_kernel_scales_input() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[2.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&x, &w, &b, ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = t(&[2, 3, 3], &(0..18).map(|i| i as f64).collect::<Vec<_>>());
        let w = Tensor::<f64>::zeros(&[4, 2, 3, 3]);
        let b = Tensor::<f64>::zeros(&[4]);
        let y = conv2d(&x, &w, &b, ConvGeometry::new(1, 1)).unwrap();
        assert_eq!(y.shape(), &[4, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padded_box_filter_counts_neighbours() {
        let x = Tensor::<f64>::full(&[1, 3, 3], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::<f64>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, ConvGeometry::new(1, 1)).unwrap();
        assert_eq!(y.data()[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(y.data()[corner], 4.0);
        }
    }

    #[test]
    fn stride_two_halves_resolution() {
        let x = Tensor::<f64>::full(&[1, 8, 8], 1.0);
        let w = Tensor::<f64>::full(&[2, 1, 3, 3], 1.0);
        let b = Tensor::<f64>::zeros(&[2]);
        let y = conv2d(&x, &w, &b, ConvGeometry::new(2, 1)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4]);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let x = Tensor::<f64>::full(&[2, 3, 3], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::<f64>::zeros(&[1]);
        assert!(conv2d(&x, &w, &b, ConvGeometry::new(1, 1)).is_err());
        let even = Tensor::<f64>::full(&[1, 2, 2, 2], 1.0);
        assert!(conv2d(&x, &even, &b, ConvGeometry::new(1, 1)).is_err());
        let mut nan = Tensor::<f64>::full(&[1, 3, 3], 1.0);
        nan.data_mut()[3] = f64::NAN;
        assert!(matches!(
            conv2d(&nan, &w, &b, ConvGeometry::new(1, 1)),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn backward_of_one_by_one_case() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[2.0]);
        let g = Tensor::<f64>::full(&[1, 2, 2], 1.0);
        let grads = conv2d_backward(&x, &w, &g, ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(grads.weights.data(), &[10.0]);
        assert_eq!(grads.bias.data(), &[4.0]);
        assert_eq!(grads.input.data(), &[2.0; 4]);
    }

    #[test]
    fn backward_of_zero_upstream_is_zero() {
        let x = Tensor::<f64>::full(&[2, 4, 4], 0.5);
        let w = Tensor::<f64>::full(&[3, 2, 3, 3], 0.25);
        let g = Tensor::<f64>::zeros(&[3, 4, 4]);
        let grads = conv2d_backward(&x, &w, &g, ConvGeometry::new(1, 1)).unwrap();
        assert!(grads.weights.data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.data().iter().all(|&v| v == 0.0));
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_padding_preserves_spatial_shape() {
        for k in [1usize, 3, 5] {
            let x = Tensor::<f64>::full(&[1, 7, 6], 1.0);
            let w = Tensor::<f64>::full(&[1, 1, k, k], 1.0);
            let b = Tensor::<f64>::zeros(&[1]);
            let y = conv2d(&x, &w, &b, ConvGeometry::new(1, (k - 1) / 2)).unwrap();
            assert_eq!(y.shape(), &[1, 7, 6]);
        }
    }
}
