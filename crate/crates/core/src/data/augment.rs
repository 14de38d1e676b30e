use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::Tensor;
use crate::rng::{stream, tag};

/// Which augmentation pipeline a dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentFamily {
    #[default]
    None,
    /// Rotation plus affine translation and scaling.
    Digits,
    /// Resized crop, horizontal flip, brightness/contrast jitter, grayscale.
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub family: AugmentFamily,
    /// Rotation drawn from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    /// Maximum shift as a fraction of the image side.
    pub translate_frac: f64,
    pub scale_range: [f64; 2],
    /// Area fraction range of the resized crop.
    pub crop_scale: [f64; 2],
    /// Aspect-ratio range of the resized crop.
    pub crop_ratio: [f64; 2],
    pub hflip_prob: f64,
    pub jitter_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub grayscale_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            family: AugmentFamily::None,
            rotation_deg: 10.0,
            translate_frac: 0.1,
            scale_range: [0.9, 1.1],
            crop_scale: [0.6, 1.0],
            crop_ratio: [3.0 / 4.0, 4.0 / 3.0],
            hflip_prob: 0.5,
            jitter_prob: 0.8,
            brightness: 0.2,
            contrast: 0.2,
            grayscale_prob: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn digits() -> Self {
        AugmentConfig {
            family: AugmentFamily::Digits,
            ..Self::default()
        }
    }

    pub fn natural() -> Self {
        AugmentConfig {
            family: AugmentFamily::Natural,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(arg_err!("{name} must lie in [0, 1], got {p}"));
            }
        }
        let positive_range = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !positive_range(self.scale_range) || !positive_range(self.crop_ratio) {
            return Err(arg_err!("scale and ratio ranges must be positive and ordered"));
        }
        if !positive_range(self.crop_scale) || self.crop_scale[1] > 1.0 {
            return Err(arg_err!("crop_scale must lie in (0, 1] and be ordered"));
        }
        if !(self.rotation_deg >= 0.0
            && (0.0..1.0).contains(&self.translate_frac)
            && (0.0..1.0).contains(&self.brightness)
            && (0.0..1.0).contains(&self.contrast))
        {
            return Err(arg_err!("rotation, translation and jitter strengths out of range"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn bernoulli(rng: &mut impl Rng, p: f64) -> bool {
    p > 0.0 && rng.random::<f64>() < p
}

/// Bilinear sample of one plane with zeros outside.
fn sample(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            f64::from(plane[yy as usize * w + xx as usize])
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let weight = wy * wx;
            if weight != 0.0 {
                v += weight * at(y0 + dy, x0 + dx);
            }
        }
    }
    v
}

/// Resamples every plane through `source(y, x) -> (sy, sx)`.
fn warp(image: &[f32], c: usize, h: usize, w: usize, source: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f32> {
    let mut out = vec![0.0f32; image.len()];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source(y as f64, x as f64);
            for ch in 0..c {
                let plane = &image[ch * h * w..(ch + 1) * h * w];
                out[ch * h * w + y * w + x] = sample(plane, h, w, sy, sx) as f32;
            }
        }
    }
    out
}

fn digits(image: &[f32], c: usize, h: usize, w: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<f32> {
    let theta = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg).to_radians();
    let tx = uniform(rng, -cfg.translate_frac, cfg.translate_frac) * w as f64;
    let ty = uniform(rng, -cfg.translate_frac, cfg.translate_frac) * h as f64;
    let s = uniform(rng, cfg.scale_range[0], cfg.scale_range[1]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    warp(image, c, h, w, |y, x| {
        let (dx, dy) = ((x - cx - tx) / s, (y - cy - ty) / s);
        (cy + sin * dx + cos * dy, cx + cos * dx - sin * dy)
    })
}

fn natural(image: &[f32], c: usize, h: usize, w: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<f32> {
    let area = (h * w) as f64;
    let mut crop = (0.0, 0.0, h as f64, w as f64);
    for _ in 0..10 {
        let target = area * uniform(rng, cfg.crop_scale[0], cfg.crop_scale[1]);
        let ratio = uniform(rng, cfg.crop_ratio[0].ln(), cfg.crop_ratio[1].ln()).exp();
        let cw = (target * ratio).sqrt().round();
        let ch = (target / ratio).sqrt().round();
        if cw >= 1.0 && ch >= 1.0 && cw <= w as f64 && ch <= h as f64 {
            let top = rng.random_range(0..=(h - ch as usize)) as f64;
            let left = rng.random_range(0..=(w - cw as usize)) as f64;
            crop = (top, left, ch, cw);
            break;
        }
    }
    let (top, left, ch, cw) = crop;
    let flip = bernoulli(rng, cfg.hflip_prob);
    let (sy, sx) = (ch / h as f64, cw / w as f64);
    let mut out = warp(image, c, h, w, |y, x| {
        let xs = if flip { w as f64 - 1.0 - x } else { x };
        (top + (y + 0.5) * sy - 0.5, left + (xs + 0.5) * sx - 0.5)
    });

    if bernoulli(rng, cfg.jitter_prob) {
        let b = uniform(rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness) as f32;
        let k = uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast) as f32;
        out.iter_mut().for_each(|v| *v = (*v * b).clamp(0.0, 1.0));
        let mean = luminance(&out, c, h * w).iter().sum::<f32>() / (h * w) as f32;
        out.iter_mut().for_each(|v| *v = ((*v - mean) * k + mean).clamp(0.0, 1.0));
    }
    if c == 3 && bernoulli(rng, cfg.grayscale_prob) {
        let gray = luminance(&out, c, h * w);
        for ch in 0..3 {
            out[ch * h * w..(ch + 1) * h * w].copy_from_slice(&gray);
        }
    }
    out
}

fn luminance(image: &[f32], c: usize, hw: usize) -> Vec<f32> {
    if c != 3 {
        return image[..hw].to_vec();
    }
    (0..hw)
        .map(|p| 0.299 * image[p] + 0.587 * image[hw + p] + 0.114 * image[2 * hw + p])
        .collect()
}

/// Applies the configured pipeline to one `[C, H, W]` image. The output has
/// the input's shape and values in `[0, 1]`.
pub fn augment(image: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    image.expect_ndim(3, "augment input")?;
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut out = match cfg.family {
        AugmentFamily::None => image.data().to_vec(),
        AugmentFamily::Digits => digits(image.data(), c, h, w, cfg, rng),
        AugmentFamily::Natural => natural(image.data(), c, h, w, cfg, rng),
    };
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::from_vec(image.shape(), out)
}

/// Augments a batch `[N, C, H, W]`. Sample `i` draws from its own stream
/// keyed by `(seed, epoch, sample_ids[i])`.
pub fn augment_batch(
    images: &Tensor<f32>,
    sample_ids: &[usize],
    cfg: &AugmentConfig,
    seed: u64,
    epoch: usize,
) -> Result<Tensor<f32>> {
    if cfg.family == AugmentFamily::None {
        return Ok(images.clone());
    }
    images.expect_ndim(4, "augment batch")?;
    if images.shape()[0] != sample_ids.len() {
        return Err(arg_err!("batch of {} images but {} ids", images.shape()[0], sample_ids.len()));
    }
    let items: Vec<Tensor<f32>> = sample_ids
        .par_iter()
        .enumerate()
        .map(|(i, &id)| {
            let mut rng = stream(seed, &[tag::AUGMENT, epoch as u64, id as u64]);
            augment(&images.item(i), cfg, &mut rng)
        })
        .collect::<Result<_>>()?;
    Tensor::stack(&items)
}
