use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::hierarchy::Hierarchy;
use crate::layers::argmax;
use crate::numerics::{Real, Tensor};
use crate::objectives::superclass_goodness;

/// Per-layer goodness of one sample, `[L, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodnessTrace {
    per_layer: Tensor<f64>,
}

impl GoodnessTrace {
    pub fn new(per_layer: Tensor<f64>) -> Result<Self> {
        per_layer.expect_ndim(2, "goodness trace")?;
        if per_layer.is_empty() {
            return Err(arg_err!("goodness trace has no entries"));
        }
        per_layer.check_finite("goodness trace")?;
        Ok(GoodnessTrace { per_layer })
    }

    pub fn num_layers(&self) -> usize {
        self.per_layer.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.per_layer.shape()[1]
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        self.per_layer.slice0(l)
    }

    pub fn as_tensor(&self) -> &Tensor<f64> {
        &self.per_layer
    }

    /// Mean goodness over layers `s..=e`.
    pub fn interval_mean(&self, s: usize, e: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.num_classes()];
        for l in s..=e {
            for (a, &g) in acc.iter_mut().zip(self.layer(l)) {
                *a += g;
            }
        }
        let len = (e - s + 1) as f64;
        acc.iter_mut().for_each(|a| *a /= len);
        acc
    }
}

/// Splits per-layer `[N, K]` goodness batches into one trace per sample.
pub fn traces_from_layers<T: Real>(goodness: &[Tensor<T>]) -> Result<Vec<GoodnessTrace>> {
    let first = goodness.first().ok_or_else(|| arg_err!("no layers"))?;
    first.expect_ndim(2, "layer goodness")?;
    let (n, k) = (first.shape()[0], first.shape()[1]);
    for g in goodness {
        g.expect_shape(&[n, k], "layer goodness")?;
    }
    (0..n)
        .map(|i| {
            let rows: Vec<f64> = goodness
                .iter()
                .flat_map(|g| g.slice0(i).iter().map(|v| v.f64()))
                .collect();
            GoodnessTrace::new(Tensor::from_vec(&[goodness.len(), k], rows)?)
        })
        .collect()
}

/// A contiguous layer range and the validation accuracy it achieved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SipInterval {
    pub s: usize,
    pub e: usize,
    pub val_accuracy: f64,
}

impl SipInterval {
    pub fn len(&self) -> usize {
        self.e - self.s + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn check_traces(traces: &[GoodnessTrace], labels: &[usize]) -> Result<(usize, usize)> {
    if traces.is_empty() {
        return Err(arg_err!("empty validation set"));
    }
    if traces.len() != labels.len() {
        return Err(arg_err!("{} traces but {} labels", traces.len(), labels.len()));
    }
    let (l, k) = (traces[0].num_layers(), traces[0].num_classes());
    if traces.iter().any(|t| t.num_layers() != l || t.num_classes() != k) {
        return Err(arg_err!("traces differ in shape"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(arg_err!("label {bad} out of range for {k} classes"));
    }
    Ok((l, k))
}

/// Chooses the layer interval whose averaged goodness classifies the
/// validation set best. Ties go to the shortest interval, then the largest `s`.
pub fn sip_select(traces: &[GoodnessTrace], labels: &[usize]) -> Result<SipInterval> {
    let (l, _) = check_traces(traces, labels)?;
    let intervals: Vec<(usize, usize)> = (0..l).flat_map(|s| (s..l).map(move |e| (s, e))).collect();
    let scores: Vec<usize> = intervals
        .par_iter()
        .map(|&(s, e)| {
            traces
                .iter()
                .zip(labels)
                .filter(|(t, &y)| argmax(&t.interval_mean(s, e)) == y)
                .count()
        })
        .collect();
    let mut best = 0;
    for i in 1..intervals.len() {
        let (s, e) = intervals[i];
        let (bs, be) = intervals[best];
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best]
                && (e - s < be - bs || (e - s == be - bs && s > bs)));
        if better {
            best = i;
        }
    }
    let (s, e) = intervals[best];
    Ok(SipInterval {
        s,
        e,
        val_accuracy: scores[best] as f64 / traces.len() as f64,
    })
}

/// Argmax of the goodness averaged over the interval's layers.
pub fn sip_predict(trace: &GoodnessTrace, interval: &SipInterval) -> Result<usize> {
    if interval.s > interval.e || interval.e >= trace.num_layers() {
        return Err(arg_err!(
            "interval [{}, {}] outside {} layers",
            interval.s,
            interval.e,
            trace.num_layers()
        ));
    }
    Ok(argmax(&trace.interval_mean(interval.s, interval.e)))
}

/// Fraction of samples `sip_predict` gets right.
pub fn sip_accuracy(traces: &[GoodnessTrace], labels: &[usize], interval: &SipInterval) -> Result<f64> {
    check_traces(traces, labels)?;
    let mut correct = 0;
    for (t, &y) in traces.iter().zip(labels) {
        if sip_predict(t, interval)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / traces.len() as f64)
}

/// Layer-wise accuracies from per-layer goodness argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAccuracy {
    /// Fine accuracy per layer, `[L]`.
    pub fine: Tensor<f64>,
    /// Super-class accuracy, `[L, D-1]`; column `j` is hierarchy level `j + 1`.
    pub super_class: Tensor<f64>,
}

impl LayerAccuracy {
    pub fn at_level(&self, layer: usize, level: usize) -> f64 {
        self.super_class.slice0(layer)[level - 1]
    }

    pub fn num_levels(&self) -> usize {
        self.super_class.shape()[1]
    }
}

pub fn per_layer_accuracy(
    traces: &[GoodnessTrace],
    labels: &[usize],
    hierarchy: &Hierarchy,
) -> Result<LayerAccuracy> {
    let (l, k) = check_traces(traces, labels)?;
    if hierarchy.num_classes() != k {
        return Err(arg_err!(
            "hierarchy covers {} classes, traces {k}",
            hierarchy.num_classes()
        ));
    }
    let levels = hierarchy.leaf_level();
    let n = traces.len() as f64;
    let mut fine = vec![0.0; l];
    let mut coarse = vec![0.0; l * levels];
    for layer in 0..l {
        fine[layer] = traces
            .iter()
            .zip(labels)
            .filter(|(t, &y)| argmax(t.layer(layer)) == y)
            .count() as f64
            / n;
        for level in 1..=levels {
            let part = hierarchy
                .partition_at_level(level)
                .ok_or_else(|| arg_err!("hierarchy has no level {level}"))?;
            let mut hits = 0usize;
            for (t, &y) in traces.iter().zip(labels) {
                let g = superclass_goodness(t.layer(layer), part)?;
                if Some(argmax(&g)) == part.group_of(y) {
                    hits += 1;
                }
            }
            coarse[layer * levels + level - 1] = hits as f64 / n;
        }
    }
    Ok(LayerAccuracy {
        fine: Tensor::from_vec(&[l], fine)?,
        super_class: Tensor::from_vec(&[l, levels], coarse)?,
    })
}
