use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::layers::argmax;
use crate::numerics::{adam_step, AdamConfig, AdamState, Real, Tensor};
use crate::rng::{stream, tag};

/// Optimizer settings of the linear probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 100,
            lr: 1e-3,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Softmax-regression classifier on frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `[K, C]`; row `k` is the prototype of class `k`.
    pub weights: Tensor<f64>,
    pub bias: Tensor<f64>,
}

impl LinearProbe {
    pub fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let c = self.weights.shape()[1];
        self.weights
            .data()
            .chunks_exact(c)
            .zip(self.bias.data())
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy<T: Real>(&self, features: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        let x = check_features(features, labels, self.weights.shape()[1])?;
        let hits = (0..labels.len())
            .filter(|&i| self.predict(x.slice0(i)) == labels[i])
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn check_features<T: Real>(features: &Tensor<T>, labels: &[usize], dim: usize) -> Result<Tensor<f64>> {
    features.expect_ndim(2, "probe features")?;
    if features.shape()[0] != labels.len() {
        return Err(arg_err!(
            "{} feature rows but {} labels",
            features.shape()[0],
            labels.len()
        ));
    }
    if labels.is_empty() {
        return Err(arg_err!("no probe samples"));
    }
    features.expect_shape(&[labels.len(), dim], "probe features")?;
    features.check_finite("probe features")?;
    Ok(features.cast())
}

/// Trains a softmax regression on `train` with Adam from zero weights and
/// reports its accuracy on `held_out`.
pub fn linear_probe<T: Real>(
    train: (&Tensor<T>, &[usize]),
    held_out: (&Tensor<T>, &[usize]),
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(LinearProbe, f64)> {
    let (features, labels) = train;
    features.expect_ndim(2, "probe features")?;
    let dim = features.shape()[1];
    let x = check_features(features, labels, dim)?;
    let n = labels.len();
    if num_classes < 2 {
        return Err(arg_err!("probe needs at least two classes"));
    }
    if n < num_classes {
        return Err(arg_err!("probe has {n} samples for {num_classes} classes"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(arg_err!("label {bad} out of range for {num_classes} classes"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(arg_err!("probe needs a positive batch size and learning rate"));
    }

    let adam = AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let mut probe = LinearProbe {
        weights: Tensor::zeros(&[num_classes, dim]),
        bias: Tensor::zeros(&[num_classes]),
    };
    let mut w_state = AdamState::new(&[num_classes, dim], adam)?;
    let mut b_state = AdamState::new(&[num_classes], adam)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(cfg.seed, &[tag::PROBE]);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut gw = Tensor::zeros(&[num_classes, dim]);
            let mut gb = Tensor::zeros(&[num_classes]);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let xi = x.slice0(i);
                let logits = probe.logits(xi);
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for (k, e) in exps.iter().enumerate() {
                    let d = (e / total - f64::from(u8::from(k == labels[i]))) * scale;
                    gb.data_mut()[k] += d;
                    for (g, &v) in gw.slice0_mut(k).iter_mut().zip(xi) {
                        *g += d * v;
                    }
                }
            }
            adam_step(&mut probe.weights, &gw, &mut w_state, cfg.lr)?;
            adam_step(&mut probe.bias, &gb, &mut b_state, cfg.lr)?;
        }
    }
    let accuracy = probe.accuracy(held_out.0, held_out.1)?;
    Ok((probe, accuracy))
}
