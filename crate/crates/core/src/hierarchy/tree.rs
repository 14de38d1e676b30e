use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::objectives::SuperClassPartition;

/// One node of a class tree. `classes` is the sorted leaf set under the node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub classes: Vec<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Rooted class tree. The root sits at depth 0; after padding every leaf
/// sits at `leaf_level()` and labels exactly one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierTree {
    nodes: Vec<TreeNode>,
    root: usize,
    num_classes: usize,
    padded: bool,
}

impl HierTree {
    /// Assembles a tree from nodes with `children` filled in; depths and leaf
    /// sets are recomputed from the root.
    pub(crate) fn from_nodes(mut nodes: Vec<TreeNode>, root: usize, num_classes: usize) -> Result<Self> {
        fn fill(nodes: &mut Vec<TreeNode>, id: usize, depth: usize) -> Vec<usize> {
            nodes[id].depth = depth;
            if nodes[id].children.is_empty() {
                return nodes[id].classes.clone();
            }
            let mut all = Vec::new();
            for c in nodes[id].children.clone() {
                all.extend(fill(nodes, c, depth + 1));
            }
            all.sort_unstable();
            nodes[id].classes = all.clone();
            all
        }
        fill(&mut nodes, root, 0);
        let mut tree = HierTree {
            nodes,
            root,
            num_classes,
            padded: false,
        };
        tree.validate_leaves()?;
        let leaf_level = tree.leaf_level();
        let padded = tree.leaves().all(|n| n.depth == leaf_level);
        tree.padded = padded;
        Ok(tree)
    }

    fn validate_leaves(&self) -> Result<()> {
        let mut seen = vec![false; self.num_classes];
        for leaf in self.leaves() {
            if leaf.classes.len() != 1 {
                return Err(Error::Invariant(format!(
                    "leaf holds {} classes, expected exactly one",
                    leaf.classes.len()
                )));
            }
            let c = leaf.classes[0];
            if c >= self.num_classes || seen[c] {
                return Err(Error::Invariant(format!("class {c} labels more than one leaf")));
            }
            seen[c] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::Invariant(format!("class {c} has no leaf")));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_padded(&self) -> bool {
        self.padded
    }

    fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Depth of the deepest leaf.
    pub fn leaf_level(&self) -> usize {
        self.leaves().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Number of depth levels including the root (`leaf_level + 1`).
    pub fn depth_count(&self) -> usize {
        self.leaf_level() + 1
    }

    pub fn nodes_at_depth(&self, depth: usize) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(move |n| n.depth == depth)
    }

    /// Leaf sets of the nodes at `depth`, sorted by smallest class.
    pub fn groups_at_depth(&self, depth: usize) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = self.nodes_at_depth(depth).map(|n| n.classes.clone()).collect();
        groups.sort_unstable_by_key(|g| g[0]);
        groups
    }

    /// Builds a padded tree from explicit per-level groupings; `levels[d - 1]`
    /// holds the groups at depth `d`. The last level must be all singletons
    /// and each level must refine the previous one.
    pub fn from_levels(levels: &[Vec<Vec<usize>>], num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(arg_err!("a hierarchy needs at least 2 classes"));
        }
        if levels.is_empty() {
            return Err(arg_err!("a hierarchy needs at least one level below the root"));
        }
        let mut partitions = Vec::with_capacity(levels.len());
        for (i, groups) in levels.iter().enumerate() {
            let mut groups = groups.clone();
            for g in &mut groups {
                g.sort_unstable();
            }
            partitions.push(SuperClassPartition::new(groups, num_classes, i + 1)?);
        }
        let leaf = partitions.last().expect("non-empty");
        if leaf.num_groups() != num_classes {
            return Err(arg_err!(
                "level {} must list every class as its own group",
                leaf.level()
            ));
        }

        let mut nodes = vec![TreeNode {
            classes: (0..num_classes).collect(),
            children: Vec::new(),
            depth: 0,
        }];
        let mut prev_ids: Vec<usize> = vec![0];
        let mut prev: Option<&SuperClassPartition> = None;
        for part in &partitions {
            let mut ids = Vec::with_capacity(part.num_groups());
            for group in part.groups() {
                let parent = match prev {
                    None => 0,
                    Some(pp) => {
                        let pg = pp.group_of(group[0]).expect("covering partition");
                        if group.iter().any(|&c| pp.group_of(c) != Some(pg)) {
                            return Err(arg_err!(
                                "level {}: group {:?} straddles two groups of level {}",
                                part.level(),
                                group,
                                pp.level()
                            ));
                        }
                        prev_ids[pg]
                    }
                };
                let id = nodes.len();
                nodes.push(TreeNode {
                    classes: group.clone(),
                    children: Vec::new(),
                    depth: part.level(),
                });
                nodes[parent].children.push(id);
                ids.push(id);
            }
            prev_ids = ids;
            prev = Some(part);
        }
        // Leaves of the last level hold singletons; everything above was
        // assigned children, so no early-terminating nodes remain.
        for n in &nodes {
            if n.is_leaf() && n.depth != partitions.len() {
                return Err(arg_err!(
                    "group {:?} at level {} has no children",
                    n.classes,
                    n.depth
                ));
            }
        }
        HierTree::from_nodes(nodes, 0, num_classes)
    }

    /// The super-class partition at depth `level` of a padded tree.
    pub fn partition_at_level(&self, level: usize) -> Result<SuperClassPartition> {
        if !self.padded {
            return Err(arg_err!("partitions are only defined on padded trees"));
        }
        if level == 0 || level > self.leaf_level() {
            return Err(arg_err!(
                "level {level} outside [1, {}]",
                self.leaf_level()
            ));
        }
        SuperClassPartition::new(self.groups_at_depth(level), self.num_classes, level)
    }

    /// Groups at every level `1..=leaf_level`.
    pub fn levels(&self) -> Result<Vec<SuperClassPartition>> {
        (1..=self.leaf_level()).map(|l| self.partition_at_level(l)).collect()
    }
}

/// Extends every leaf that ends above the deepest level with a chain of
/// copies of itself, so every depth partitions the full class set.
pub fn pad_tree(tree: &HierTree) -> HierTree {
    let target = tree.leaf_level();
    let mut nodes = Vec::with_capacity(tree.nodes.len());

    fn copy(src: &HierTree, id: usize, target: usize, out: &mut Vec<TreeNode>) -> usize {
        let node = &src.nodes[id];
        let new_id = out.len();
        out.push(TreeNode {
            classes: node.classes.clone(),
            children: Vec::new(),
            depth: node.depth,
        });
        if node.is_leaf() {
            let mut tail = new_id;
            for d in node.depth + 1..=target {
                let dup = out.len();
                out.push(TreeNode {
                    classes: node.classes.clone(),
                    children: Vec::new(),
                    depth: d,
                });
                out[tail].children.push(dup);
                tail = dup;
            }
        } else {
            for &c in &node.children {
                let child = copy(src, c, target, out);
                out[new_id].children.push(child);
            }
        }
        new_id
    }

    let root = copy(tree, tree.root, target, &mut nodes);
    HierTree::from_nodes(nodes, root, tree.num_classes).expect("padding preserves leaves")
}
