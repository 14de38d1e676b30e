use crate::error::{arg_err, Result};
use crate::numerics::{Real, Tensor};

use super::tree::{HierTree, TreeNode};

/// L2-normalized class prototypes, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    vectors: Tensor<f64>,
}

impl ClassPrototypes {
    pub fn vectors(&self) -> &Tensor<f64> {
        &self.vectors
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn row(&self, class: usize) -> &[f64] {
        self.vectors.slice0(class)
    }
}

/// Normalizes each row of a `[K, D]` classifier weight matrix.
pub fn extract_prototypes<T: Real>(classifier_weights: &Tensor<T>) -> Result<ClassPrototypes> {
    classifier_weights.expect_ndim(2, "classifier weights")?;
    classifier_weights.check_finite("classifier weights")?;
    let (k, d) = (classifier_weights.shape()[0], classifier_weights.shape()[1]);
    if k < 2 {
        return Err(arg_err!("need at least 2 class prototypes, got {k}"));
    }
    let mut out = Vec::with_capacity(k * d);
    for c in 0..k {
        let row: Vec<f64> = classifier_weights.slice0(c).iter().map(|x| x.f64()).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(arg_err!("degenerate prototype: class {c} has an all-zero weight row"));
        }
        out.extend(row.iter().map(|x| x / norm));
    }
    Ok(ClassPrototypes {
        vectors: Tensor::from_vec(&[k, d], out)?,
    })
}

/// One agglomeration step. Leaves are clusters `0..K`; the cluster created by
/// merge `i` gets id `K + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Increase in the within-cluster sum of squares caused by the merge.
    pub cost: f64,
    pub size: usize,
}

/// Ward agglomeration with Lance-Williams distance updates.
///
/// Ties on the merge cost go to the pair whose (smaller, larger) smallest
/// member classes compare lowest.
pub fn ward_merges(protos: &ClassPrototypes) -> Vec<Merge> {
    let k = protos.num_classes();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    // dist holds twice the Ward merge cost between active clusters.
    let mut dist = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let d = sq(protos.row(i), protos.row(j));
            dist[i * k + j] = d;
            dist[j * k + i] = d;
        }
    }
    let mut size = vec![1usize; k];
    let mut min_class: Vec<usize> = (0..k).collect();
    let mut cluster_id: Vec<usize> = (0..k).collect();
    let mut active = vec![true; k];
    let mut merges = Vec::with_capacity(k - 1);

    for step in 0..k - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in 0..k {
            if !active[i] {
                continue;
            }
            for j in i + 1..k {
                if !active[j] {
                    continue;
                }
                let d = dist[i * k + j];
                let key = (min_class[i].min(min_class[j]), min_class[i].max(min_class[j]));
                let better = match best {
                    None => true,
                    Some((bd, bkey, _, _)) => d < bd || (d == bd && key < bkey),
                };
                if better {
                    best = Some((d, key, i, j));
                }
            }
        }
        let (d, _, i, j) = best.expect("at least two active clusters");
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for m in 0..k {
            if !active[m] || m == i || m == j {
                continue;
            }
            let nm = size[m] as f64;
            let updated = ((ni + nm) * dist[i * k + m] + (nj + nm) * dist[j * k + m] - nm * d)
                / (ni + nj + nm);
            dist[i * k + m] = updated;
            dist[m * k + i] = updated;
        }
        let (left, right) = if min_class[i] < min_class[j] {
            (cluster_id[i], cluster_id[j])
        } else {
            (cluster_id[j], cluster_id[i])
        };
        size[i] += size[j];
        min_class[i] = min_class[i].min(min_class[j]);
        cluster_id[i] = k + step;
        active[j] = false;
        merges.push(Merge {
            left,
            right,
            cost: d / 2.0,
            size: size[i],
        });
    }
    merges
}

/// Binary merge tree of the prototypes under Ward linkage (unpadded).
pub fn build_tree(protos: &ClassPrototypes) -> Result<HierTree> {
    let k = protos.num_classes();
    let merges = ward_merges(protos);
    let mut nodes: Vec<TreeNode> = (0..k)
        .map(|c| TreeNode {
            classes: vec![c],
            children: Vec::new(),
            depth: 0,
        })
        .collect();
    for m in &merges {
        nodes.push(TreeNode {
            classes: Vec::new(),
            children: vec![m.left, m.right],
            depth: 0,
        });
    }
    let root = nodes.len() - 1;
    HierTree::from_nodes(nodes, root, k)
}
