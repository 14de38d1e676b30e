use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use crate::error::{arg_err, Result};
use crate::hierarchy::HierTree;
use crate::numerics::Tensor;
use crate::rng::{stream, tag};

/// Parameters of the synthetic hierarchical image generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Number of fine classes, `2^levels`.
    pub num_classes: usize,
    /// Depth of the binary class tree below the root.
    pub levels: usize,
    pub n_per_class: usize,
    pub image_size: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 8,
            levels: 3,
            n_per_class: 64,
            image_size: 16,
            noise: 0.1,
            seed: 0,
        }
    }
}

const WAVES: usize = 3;

/// Sum of a few plane waves whose frequencies (cycles per image) lie in
/// `[lo, hi)`, scaled to unit peak amplitude.
fn wave_pattern(rng: &mut impl Rng, size: usize, lo: usize, hi: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..WAVES)
        .map(|_| {
            let f = rng.random_range(lo..hi) as f64;
            let angle = rng.random_range(0.0..PI);
            let phase = rng.random_range(0.0..2.0 * PI);
            (f * angle.cos(), f * angle.sin(), phase)
        })
        .collect();
    let s = size as f64;
    let mut out: Vec<f64> = (0..size * size)
        .map(|p| {
            let (y, x) = ((p / size) as f64, (p % size) as f64);
            waves
                .iter()
                .map(|&(u, v, ph)| (2.0 * PI * (u * x + v * y) / s + ph).cos())
                .sum()
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    out.iter_mut().for_each(|v| *v /= peak);
    out
}

/// Oriented grating of `freq` cycles per image, scaled to unit peak.
fn grating(rng: &mut impl Rng, size: usize, freq: f64, angle: f64) -> Vec<f64> {
    let phase = rng.random_range(0.0..2.0 * PI);
    let (u, v) = (freq * angle.cos(), freq * angle.sin());
    let s = size as f64;
    (0..size * size)
        .map(|p| {
            let (y, x) = ((p / size) as f64, (p % size) as f64);
            (2.0 * PI * (u * x + v * y) / s + phase).cos()
        })
        .collect()
}

/// Layout of the `node`-th group at tree depth `level`: plane waves whose
/// frequency grows with depth.
fn node_pattern(rng: &mut impl Rng, size: usize, level: usize) -> Vec<f64> {
    let lo = 1 << (level - 1);
    let hi = (1 << level).min(size / 2).max(lo + 1);
    wave_pattern(rng, size, lo, hi)
}

/// Texture orientation of class `c`: the two top groups sit a quarter turn
/// apart and classes within a group fan out over a narrow arc.
fn texture_angle(c: usize, levels: usize) -> f64 {
    let per_group = 1usize << (levels - 1);
    let (group, member) = (c / per_group, c % per_group);
    let arc = PI / 8.0;
    let offset = (member as f64 + 0.5) / per_group as f64 - 0.5;
    PI * group as f64 / 2.0 + arc * offset
}

/// Amplitude of the pattern contributed at tree depth `level`; coarser
/// levels dominate.
fn amplitude(level: usize) -> f64 {
    0.3 * 0.7f64.powi(level as i32 - 1)
}

/// Ground-truth binary tree: at depth `d` class `c` belongs to group
/// `c >> (levels - d)`.
pub fn synth_tree(levels: usize) -> Result<HierTree> {
    let k = 1usize << levels;
    let groups: Vec<Vec<Vec<usize>>> = (1..=levels)
        .map(|d| {
            let shift = levels - d;
            (0..1usize << d)
                .map(|g| (0..k).filter(|c| c >> shift == g).collect())
                .collect()
        })
        .collect();
    HierTree::from_levels(&groups, k)
}

/// Generates single-channel images whose class template is the sum of one
/// layout per ancestor in a binary class tree, at decreasing amplitude with
/// depth, plus a fine oriented texture. Texture orientations separate the two
/// top groups clearly and sibling classes only slightly, so small receptive
/// fields see the coarse split first. Sample `i` has class `i % K`.
pub fn synth_hier_dataset(cfg: &SynthConfig) -> Result<(Dataset, HierTree)> {
    generate(cfg, 1, Split::Train)
}

/// A second draw from the same class templates with fresh noise.
pub fn synth_test_set(cfg: &SynthConfig) -> Result<Dataset> {
    Ok(generate(cfg, 2, Split::Test)?.0)
}

fn generate(cfg: &SynthConfig, noise_stream: u64, split: Split) -> Result<(Dataset, HierTree)> {
    let k = cfg.num_classes;
    if cfg.levels == 0 || cfg.levels > 10 || k != 1usize << cfg.levels {
        return Err(arg_err!(
            "synthetic data needs K = 2^levels, got K = {k} with {} levels",
            cfg.levels
        ));
    }
    if cfg.n_per_class == 0 || cfg.image_size < 4 || !(cfg.noise >= 0.0) {
        return Err(arg_err!("synthetic data needs samples, images of side >= 4 and noise >= 0"));
    }
    let size = cfg.image_size;
    let hw = size * size;
    let mut pattern_rng = stream(cfg.seed, &[tag::SYNTH, 0]);
    let patterns: Vec<Vec<Vec<f64>>> = (1..=cfg.levels)
        .map(|d| {
            (0..1usize << d)
                .map(|_| node_pattern(&mut pattern_rng, size, d))
                .collect()
        })
        .collect();
    let templates: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut t = vec![0.5; hw];
            for d in 1..=cfg.levels {
                let node = c >> (cfg.levels - d);
                let a = amplitude(d);
                for (v, p) in t.iter_mut().zip(&patterns[d - 1][node]) {
                    *v += a * p;
                }
            }
            let freq = (size / 4).max(1) as f64;
            let texture = grating(&mut pattern_rng, size, freq, texture_angle(c, cfg.levels));
            for (v, p) in t.iter_mut().zip(&texture) {
                *v += amplitude(1) * p;
            }
            t
        })
        .collect();

    let n = k * cfg.n_per_class;
    let normal = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).map_err(|e| arg_err!("{e}"))?;
    let mut noise_rng = stream(cfg.seed, &[tag::SYNTH, noise_stream]);
    let mut data = Vec::with_capacity(n * hw);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    for &c in &labels {
        for &v in &templates[c] {
            let jitter = if cfg.noise > 0.0 { normal.sample(&mut noise_rng) } else { 0.0 };
            data.push((v + jitter).clamp(0.0, 1.0) as f32);
        }
    }
    let images = Tensor::from_vec(&[n, 1, size, size], data)?;
    Ok((Dataset::new(images, labels, k, split)?, synth_tree(cfg.levels)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = SynthConfig {
            n_per_class: 3,
            ..SynthConfig::default()
        };
        let (a, ta) = synth_hier_dataset(&cfg).unwrap();
        let (b, tb) = synth_hier_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = synth_hier_dataset(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
        let test = synth_test_set(&cfg).unwrap();
        assert_eq!(test.split(), Split::Test);
        assert_ne!(test.images(), a.images());
    }

    #[test]
    fn zero_noise_repeats_templates() {
        let cfg = SynthConfig {
            n_per_class: 2,
            noise: 0.0,
            ..SynthConfig::default()
        };
        let (ds, _) = synth_hier_dataset(&cfg).unwrap();
        for c in 0..8 {
            assert_eq!(ds.image(c), ds.image(c + 8));
        }
        assert_ne!(ds.image(0), ds.image(1));
    }

    #[test]
    fn texture_separates_top_groups_more_than_siblings() {
        let angles: Vec<f64> = (0..8).map(|c| texture_angle(c, 3)).collect();
        let within = angles[3] - angles[0];
        assert!(within > 0.0 && within < PI / 8.0);
        assert!((angles[4] - angles[0] - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn tree_matches_binary_split() {
        let tree = synth_tree(3).unwrap();
        assert_eq!(tree.groups_at_depth(1), vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
        assert_eq!(tree.groups_at_depth(2).len(), 4);
        assert_eq!(tree.leaf_level(), 3);
    }

    #[test]
    fn invalid_class_count() {
        let cfg = SynthConfig {
            num_classes: 6,
            ..SynthConfig::default()
        };
        assert!(synth_hier_dataset(&cfg).is_err());
    }
}
