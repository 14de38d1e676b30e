//! Class hierarchies: Ward clustering of classifier prototypes, padding of
//! the merge tree to uniform depth, per-level partitions, layer-to-level
//! mappings, and a text format for saving or importing trees.
//!
//! Depth convention: the root is depth 0 and the singleton leaves sit at
//! `leaf_level = depth_count - 1`.

mod cluster;
mod file;
mod mapping;
mod tree;

pub use cluster::{build_tree, extract_prototypes, ward_merges, ClassPrototypes, Merge};
pub use file::{load_hierarchy, save_hierarchy, Hierarchy, DEFAULT_LAYERS};
pub use mapping::{layer_to_level, LevelMapping, MappingStrategy};
pub use tree::{pad_tree, HierTree, TreeNode};
