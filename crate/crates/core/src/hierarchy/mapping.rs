use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// How network depth is spread over hierarchy levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MappingStrategy {
    /// Levels spread evenly over the layers, first layer coarsest.
    #[default]
    Balanced,
    /// One level deeper per layer until the leaf level is reached.
    Incremental,
    /// Finer levels only in the last few layers; earlier layers stay at level 1.
    Decremental,
}

impl MappingStrategy {
    pub const ALL: [MappingStrategy; 3] = [
        MappingStrategy::Balanced,
        MappingStrategy::Incremental,
        MappingStrategy::Decremental,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MappingStrategy::Balanced => "balanced",
            MappingStrategy::Incremental => "incremental",
            MappingStrategy::Decremental => "decremental",
        }
    }
}

impl fmt::Display for MappingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MappingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(MappingStrategy::Balanced),
            "incremental" => Ok(MappingStrategy::Incremental),
            "decremental" => Ok(MappingStrategy::Decremental),
            other => Err(arg_err!(
                "unknown mapping strategy `{other}` (expected balanced, incremental or decremental)"
            )),
        }
    }
}

/// Hierarchy level supervising `layer` in a network of `num_layers` layers,
/// for a tree with `depth_count` levels including the root. The last layer
/// always maps to the leaf level.
pub fn layer_to_level(
    layer: usize,
    num_layers: usize,
    depth_count: usize,
    strategy: MappingStrategy,
) -> Result<usize> {
    if depth_count < 2 {
        return Err(arg_err!("hierarchy needs at least 2 levels, got {depth_count}"));
    }
    if layer >= num_layers {
        return Err(arg_err!("layer {layer} outside [0, {}]", num_layers.saturating_sub(1)));
    }
    let leaf = depth_count - 1;
    let last = num_layers - 1;
    // The final layer always trains on fine labels, even when the network is
    // too shallow for the incremental ramp to get there.
    let level = match strategy {
        _ if layer == last => leaf,
        MappingStrategy::Balanced if layer == 0 => 1,
        MappingStrategy::Balanced => (layer * leaf).div_ceil(last),
        MappingStrategy::Incremental => (1 + layer).min(leaf),
        MappingStrategy::Decremental => leaf.saturating_sub(last - layer).max(1),
    };
    Ok(level.clamp(1, leaf))
}

/// Per-layer level assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelMapping {
    strategy: MappingStrategy,
    depth_count: usize,
    assignment: Vec<usize>,
}

impl LevelMapping {
    pub fn new(strategy: MappingStrategy, num_layers: usize, depth_count: usize) -> Result<Self> {
        if num_layers == 0 {
            return Err(arg_err!("a level mapping needs at least one layer"));
        }
        let assignment = (0..num_layers)
            .map(|l| layer_to_level(l, num_layers, depth_count, strategy))
            .collect::<Result<_>>()?;
        Ok(LevelMapping {
            strategy,
            depth_count,
            assignment,
        })
    }

    pub fn strategy(&self) -> MappingStrategy {
        self.strategy
    }

    pub fn depth_count(&self) -> usize {
        self.depth_count
    }

    pub fn num_layers(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn level_of(&self, layer: usize) -> Option<usize> {
        self.assignment.get(layer).copied()
    }
}
