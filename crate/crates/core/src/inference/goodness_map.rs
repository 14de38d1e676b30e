//! Per-class goodness maps as CSV.
//!
//! Layout: for each class `k` a header row `class,<k>` followed by `H` rows
//! of `W` comma-separated values (the mean over the class's channels at each
//! position), then a blank line. The file ends with a `class,mean_goodness`
//! table holding one row per class.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{arg_err, Error, Result};
use crate::numerics::{Real, Tensor};

/// Spatial goodness maps `[K, H, W]` and the per-class scalar means.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodnessMaps {
    pub maps: Tensor<f64>,
    pub mean_goodness: Vec<f64>,
}

/// Averages the activations `[C, H, W]` over each class's channel subset.
pub fn goodness_maps<T: Real>(activations: &Tensor<T>, num_classes: usize) -> Result<GoodnessMaps> {
    activations.expect_ndim(3, "activations")?;
    let (c, h, w) = (activations.shape()[0], activations.shape()[1], activations.shape()[2]);
    if num_classes == 0 || c % num_classes != 0 {
        return Err(arg_err!("{c} channels cannot be split into {num_classes} classes"));
    }
    let per = c / num_classes;
    let hw = h * w;
    let mut maps = vec![0.0; num_classes * hw];
    for k in 0..num_classes {
        let map = &mut maps[k * hw..(k + 1) * hw];
        for ch in k * per..(k + 1) * per {
            for (m, v) in map.iter_mut().zip(&activations.data()[ch * hw..(ch + 1) * hw]) {
                *m += v.f64();
            }
        }
        map.iter_mut().for_each(|m| *m /= per as f64);
    }
    let mean_goodness = maps
        .chunks_exact(hw)
        .map(|m| m.iter().sum::<f64>() / hw as f64)
        .collect();
    Ok(GoodnessMaps {
        maps: Tensor::from_vec(&[num_classes, h, w], maps)?,
        mean_goodness,
    })
}

pub fn goodness_maps_to_csv(maps: &GoodnessMaps) -> String {
    let (k, h, w) = (maps.maps.shape()[0], maps.maps.shape()[1], maps.maps.shape()[2]);
    let mut out = String::new();
    for class in 0..k {
        let _ = writeln!(out, "class,{class}");
        let map = maps.maps.slice0(class);
        for row in map.chunks_exact(w).take(h) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out.push('\n');
    }
    out.push_str("class,mean_goodness\n");
    for (class, g) in maps.mean_goodness.iter().enumerate() {
        let _ = writeln!(out, "{class},{g:e}");
    }
    out
}

/// Writes the maps of one layer's activations to `path`.
pub fn export_goodness_maps<T: Real>(activations: &Tensor<T>, num_classes: usize, path: &Path) -> Result<()> {
    let maps = goodness_maps(activations, num_classes)?;
    std::fs::write(path, goodness_maps_to_csv(&maps)).map_err(|e| Error::io(path, e))
}

fn bad(origin: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Validation {
        path: origin.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses the output of [`goodness_maps_to_csv`].
pub fn parse_goodness_maps(text: &str, origin: &Path) -> Result<GoodnessMaps> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let number = |no: usize, s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(origin, no, format!("not a number: {s:?}")))
    };

    let mut maps: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let (no, line) = lines[i];
        if line == "class,mean_goodness" {
            break;
        }
        let label = line
            .strip_prefix("class,")
            .ok_or_else(|| bad(origin, no, "expected a `class,<k>` header"))?;
        if label.trim().parse::<usize>().ok() != Some(maps.len()) {
            return Err(bad(origin, no, format!("expected class {}", maps.len())));
        }
        i += 1;
        let mut rows = Vec::new();
        while i < lines.len() && !lines[i].1.starts_with("class,") {
            let (no, line) = lines[i];
            rows.push(line.split(',').map(|c| number(no, c)).collect::<Result<Vec<_>>>()?);
            i += 1;
        }
        maps.push(rows);
    }
    if i == lines.len() {
        return Err(bad(origin, text.lines().count(), "missing `class,mean_goodness` table"));
    }
    i += 1;
    let mut mean_goodness = Vec::new();
    for &(no, line) in &lines[i..] {
        let (class, value) = line
            .split_once(',')
            .ok_or_else(|| bad(origin, no, "expected `class,value`"))?;
        if class.trim().parse::<usize>().ok() != Some(mean_goodness.len()) {
            return Err(bad(origin, no, format!("expected class {}", mean_goodness.len())));
        }
        mean_goodness.push(number(no, value)?);
    }

    let k = maps.len();
    let h = maps.first().map_or(0, |m| m.len());
    let w = maps.first().and_then(|m| m.first()).map_or(0, |r| r.len());
    if k == 0 || h == 0 || w == 0 {
        return Err(bad(origin, 1, "no maps"));
    }
    if mean_goodness.len() != k {
        return Err(bad(origin, text.lines().count(), "summary table does not match the maps"));
    }
    if maps.iter().any(|m| m.len() != h || m.iter().any(|r| r.len() != w)) {
        return Err(bad(origin, 1, "maps differ in shape"));
    }
    let data = maps.into_iter().flatten().flatten().collect();
    Ok(GoodnessMaps {
        maps: Tensor::from_vec(&[k, h, w], data)?,
        mean_goodness,
    })
}
