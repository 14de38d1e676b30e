//! Independent brute-force re-implementations used as oracles.

use hclff::inference::GoodnessTrace;

/// One Ward agglomeration step: the classes of the new cluster and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMerge {
    pub classes: Vec<usize>,
    pub cost: f64,
}

fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = points[0].len();
    let mut c = vec![0.0; dim];
    for &m in members {
        for (ci, v) in c.iter_mut().zip(&points[m]) {
            *ci += v;
        }
    }
    c.iter().map(|v| v / members.len() as f64).collect()
}

/// Ward agglomeration by exhaustive search over cluster pairs, using the
/// centroid form of the merge cost `n_a n_b / (n_a + n_b) ‖μ_a − μ_b‖²` on
/// L2-normalized rows. Ties go to the pair with the smallest
/// (min class, min class) key.
pub fn brute_force_ward(raw: &[Vec<f64>]) -> Vec<OracleMerge> {
    let points: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| x / n).collect()
        })
        .collect();
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|c| vec![c]).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (ca, cb) = (centroid(&points, &clusters[a]), centroid(&points, &clusters[b]));
                let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
                let sq: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum();
                let cost = na * nb / (na + nb) * sq;
                let (ma, mb) = (clusters[a][0], clusters[b][0]);
                let key = (ma.min(mb), ma.max(mb));
                let better = match best {
                    None => true,
                    Some((bc, bk, _, _)) => cost < bc - 1e-12 || ((cost - bc).abs() <= 1e-12 && key < bk),
                };
                if better {
                    best = Some((cost, key, a, b));
                }
            }
        }
        let (cost, _, a, b) = best.expect("two clusters");
        let mut merged = clusters[a].clone();
        merged.extend(&clusters[b]);
        merged.sort_unstable();
        clusters.remove(b);
        clusters[a] = merged.clone();
        merges.push(OracleMerge {
            classes: merged,
            cost,
        });
    }
    merges
}

/// Best interval by exhaustive search: maximum correct count, then shortest,
/// then largest start. Returns `(s, e, accuracy)`.
pub fn brute_force_sip(traces: &[GoodnessTrace], labels: &[usize]) -> (usize, usize, f64) {
    let l = traces[0].num_layers();
    let k = traces[0].num_classes();
    let mut best: Option<(usize, usize, usize)> = None;
    for s in 0..l {
        for e in s..l {
            let mut correct = 0;
            for (t, &y) in traces.iter().zip(labels) {
                let data = t.as_tensor().data();
                let mut sums = vec![0.0; k];
                for layer in s..=e {
                    for (c, v) in sums.iter_mut().enumerate() {
                        *v += data[layer * k + c];
                    }
                }
                let mut arg = 0;
                for c in 1..k {
                    if sums[c] > sums[arg] {
                        arg = c;
                    }
                }
                if arg == y {
                    correct += 1;
                }
            }
            let better = match best {
                None => true,
                Some((bs, be, bc)) => {
                    correct > bc
                        || (correct == bc && (e - s < be - bs || (e - s == be - bs && s > bs)))
                }
            };
            if better {
                best = Some((s, e, correct));
            }
        }
    }
    let (s, e, c) = best.expect("at least one interval");
    (s, e, c as f64 / labels.len() as f64)
}
