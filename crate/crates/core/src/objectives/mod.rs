//! Local training objectives and their analytic gradients.
//!
//! * [`cwc_loss`]: softmax cross-entropy over per-class goodness.
//! * [`hiercwc_loss`]: the same cross-entropy evaluated on super-class
//!   goodness, the mean of member-class goodness within each group.
//! * [`supcon_loss`]: supervised contrastive loss on cosine similarities.
//!
//! All log-sum-exp evaluations are max-shifted and carried out in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::{Real, Tensor};

/// Disjoint, covering grouping of the fine classes `0..K` at one hierarchy level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperClassPartition {
    groups: Vec<Vec<usize>>,
    level: usize,
    class_to_group: Vec<usize>,
}

impl SuperClassPartition {
    /// Validates that `groups` are non-empty, pairwise disjoint and cover `0..num_classes`.
    pub fn new(groups: Vec<Vec<usize>>, num_classes: usize, level: usize) -> Result<Self> {
        let mut class_to_group = vec![usize::MAX; num_classes];
        for (gi, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(arg_err!("level {level}: group {gi} is empty"));
            }
            for &c in group {
                if c >= num_classes {
                    return Err(arg_err!(
                        "level {level}: class {c} out of range for {num_classes} classes"
                    ));
                }
                if class_to_group[c] != usize::MAX {
                    return Err(arg_err!(
                        "level {level}: class {c} appears in groups {} and {gi}",
                        class_to_group[c]
                    ));
                }
                class_to_group[c] = gi;
            }
        }
        if let Some(missing) = class_to_group.iter().position(|&g| g == usize::MAX) {
            return Err(arg_err!("level {level}: class {missing} is in no group"));
        }
        Ok(SuperClassPartition {
            groups,
            level,
            class_to_group,
        })
    }

    /// Every class in its own group.
    pub fn singletons(num_classes: usize, level: usize) -> Self {
        SuperClassPartition {
            groups: (0..num_classes).map(|c| vec![c]).collect(),
            level,
            class_to_group: (0..num_classes).collect(),
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_to_group.len()
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn group_of(&self, class: usize) -> Option<usize> {
        self.class_to_group.get(class).copied()
    }
}

/// Reduction applied to the summed contrastive loss before it enters the
/// combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupconReduction {
    /// Divide the anchor sum by the batch size.
    #[default]
    Sum,
    /// Divide by the number of anchors that have at least one positive.
    MeanOverValidAnchors,
}

/// Max-shifted softmax cross-entropy. Returns the loss and `softmax - onehot`.
fn softmax_xent(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits[target] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

/// Channel-wise competitive loss for one sample.
pub fn cwc_loss<T: Real>(goodness: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= goodness.len() {
        return Err(arg_err!(
            "label {label} out of range for {} classes",
            goodness.len()
        ));
    }
    let logits: Vec<f64> = goodness.iter().map(|g| g.f64()).collect();
    let (loss, grad) = softmax_xent(&logits, label);
    Ok((T::of(loss), grad.into_iter().map(T::of).collect()))
}

/// Mean goodness of each super-class.
pub fn superclass_goodness<T: Real>(goodness: &[T], partition: &SuperClassPartition) -> Result<Vec<T>> {
    if goodness.len() != partition.num_classes() {
        return Err(arg_err!(
            "goodness has {} entries but partition covers {} classes",
            goodness.len(),
            partition.num_classes()
        ));
    }
    Ok(partition
        .groups()
        .iter()
        .map(|g| {
            let sum = g.iter().fold(T::zero(), |acc, &c| acc + goodness[c]);
            sum / T::of(g.len() as f64)
        })
        .collect())
}

/// Hierarchical CwC loss: cross-entropy over super-class goodness with the
/// group containing `fine_label` as target. The gradient is mapped back onto
/// the fine goodness vector through the group means.
pub fn hiercwc_loss<T: Real>(
    goodness: &[T],
    fine_label: usize,
    partition: &SuperClassPartition,
) -> Result<(T, Vec<T>)> {
    let coarse = superclass_goodness(goodness, partition)?;
    let target = partition.group_of(fine_label).ok_or_else(|| {
        Error::Invariant(format!(
            "fine label {fine_label} belongs to no group at level {}",
            partition.level()
        ))
    })?;
    let (loss, coarse_grad) = cwc_loss(&coarse, target)?;
    let mut grad = vec![T::zero(); goodness.len()];
    for (group, &gg) in partition.groups().iter().zip(&coarse_grad) {
        let share = gg / T::of(group.len() as f64);
        for &c in group {
            grad[c] = share;
        }
    }
    Ok((loss, grad))
}

const NORM_FLOOR: f64 = 1e-12;

/// Supervised contrastive loss summed over anchors.
///
/// `embeddings` is `[N, E]`; rows are L2-normalized internally so similarity
/// is cosine. Anchors without a same-label partner contribute zero. Returns
/// the loss, the gradient with respect to the raw embeddings, and the number
/// of anchors that had at least one positive.
pub fn supcon_loss<T: Real>(
    embeddings: &Tensor<T>,
    labels: &[usize],
    tau: f64,
) -> Result<(T, Tensor<T>, usize)> {
    embeddings.expect_ndim(2, "supcon embeddings")?;
    let (n, e) = (embeddings.shape()[0], embeddings.shape()[1]);
    if n < 2 {
        return Err(arg_err!("supcon needs at least 2 samples, got {n}"));
    }
    if labels.len() != n {
        return Err(arg_err!("supcon: {n} embeddings but {} labels", labels.len()));
    }
    if !(tau > 0.0) {
        return Err(arg_err!("supcon temperature must be positive, got {tau}"));
    }
    embeddings.check_finite("supcon embeddings")?;

    let raw: Vec<f64> = embeddings.to_f64_vec();
    let norms: Vec<f64> = raw
        .chunks_exact(e)
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let unit: Vec<f64> = raw
        .chunks_exact(e)
        .zip(&norms)
        .flat_map(|(r, &nr)| {
            let d = nr.max(NORM_FLOOR);
            r.iter().map(move |x| x / d)
        })
        .collect();
    let row = |i: usize| &unit[i * e..(i + 1) * e];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = dot(row(i), row(j)) / tau;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }

    let mut loss = 0.0;
    let mut valid = 0usize;
    let mut dsim = vec![0.0; n * n];
    for i in 0..n {
        let positives = (0..n).filter(|&a| a != i && labels[a] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        valid += 1;
        let srow = &sim[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| srow[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (srow[a] - max).exp()).sum();
        let lse = max + denom.ln();
        let inv_p = 1.0 / positives as f64;
        let mut pos_sum = 0.0;
        for a in (0..n).filter(|&a| a != i) {
            let is_pos = labels[a] == labels[i];
            if is_pos {
                pos_sum += srow[a];
            }
            let p = (srow[a] - max).exp() / denom;
            dsim[i * n + a] = p - if is_pos { inv_p } else { 0.0 };
        }
        loss += lse - inv_p * pos_sum;
    }

    // d sim_ia / d u_i = u_a / tau and symmetrically for u_a.
    let mut du = vec![0.0; n * e];
    for i in 0..n {
        for a in 0..n {
            let c = dsim[i * n + a];
            if c == 0.0 {
                continue;
            }
            let c = c / tau;
            for k in 0..e {
                du[i * e + k] += c * unit[a * e + k];
                du[a * e + k] += c * unit[i * e + k];
            }
        }
    }

    let mut grad = Tensor::zeros(&[n, e]);
    for i in 0..n {
        let u = row(i);
        let g = &du[i * e..(i + 1) * e];
        let out = &mut grad.data_mut()[i * e..(i + 1) * e];
        if norms[i] > NORM_FLOOR {
            let proj = dot(u, g);
            for k in 0..e {
                out[k] = T::of((g[k] - u[k] * proj) / norms[i]);
            }
        } else {
            for k in 0..e {
                out[k] = T::of(g[k] / NORM_FLOOR);
            }
        }
    }
    Ok((T::of(loss), grad, valid))
}

/// `hier + lambda * con`.
pub fn total_loss<T: Real>(hier: T, con: T, lambda: f64) -> T {
    hier + T::of(lambda) * con
}
