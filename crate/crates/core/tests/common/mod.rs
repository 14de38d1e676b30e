#![allow(dead_code)]

pub mod grad;
pub mod oracles;
pub mod toy;

use hclff::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 20;
pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-4;
pub const STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform values in `[-hi, -lo] ∪ [lo, hi]`, away from ReLU's kink.
pub fn away_from_zero(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Fourth-order central finite differences of `f` at `x`.
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            let mut at = |offset: f64| {
                probe.data_mut()[i] = orig + offset;
                f(&probe)
            };
            let (p1, m1, p2, m2) = (at(STEP), at(-STEP), at(2.0 * STEP), at(-2.0 * STEP));
            probe.data_mut()[i] = orig;
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * STEP)
        })
        .collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)`; the floor keeps finite-difference
/// round-off on an all-zero gradient from counting as relative error.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-6)
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}
