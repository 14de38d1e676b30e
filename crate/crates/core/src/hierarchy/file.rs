use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::SuperClassPartition;

use super::mapping::{LevelMapping, MappingStrategy};
use super::tree::{pad_tree, HierTree};

/// Layer count assumed when a hierarchy file has no `layers=` header.
pub const DEFAULT_LAYERS: usize = 17;

/// A padded class tree together with its per-level partitions and the
/// layer-to-level mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    tree: HierTree,
    mapping: LevelMapping,
    partitions: Vec<SuperClassPartition>,
}

impl Hierarchy {
    /// Pads `tree` if needed and assigns levels to `num_layers` layers.
    pub fn new(tree: &HierTree, strategy: MappingStrategy, num_layers: usize) -> Result<Self> {
        let padded = if tree.is_padded() {
            tree.clone()
        } else {
            pad_tree(tree)
        };
        let levels: Vec<Vec<Vec<usize>>> = padded
            .levels()?
            .iter()
            .map(|p| p.groups().to_vec())
            .collect();
        Self::from_levels(&levels, padded.num_classes(), strategy, num_layers)
    }

    /// Builds from explicit per-level groups; `levels[d - 1]` is depth `d`.
    pub fn from_levels(
        levels: &[Vec<Vec<usize>>],
        num_classes: usize,
        strategy: MappingStrategy,
        num_layers: usize,
    ) -> Result<Self> {
        let tree = HierTree::from_levels(levels, num_classes)?;
        let partitions = tree.levels()?;
        let mapping = LevelMapping::new(strategy, num_layers, tree.depth_count())?;
        Ok(Hierarchy {
            tree,
            mapping,
            partitions,
        })
    }

    /// Two-level hierarchy whose only level is the fine labels.
    pub fn flat(num_classes: usize, num_layers: usize) -> Result<Self> {
        let singletons: Vec<Vec<usize>> = (0..num_classes).map(|c| vec![c]).collect();
        Self::from_levels(&[singletons], num_classes, MappingStrategy::Balanced, num_layers)
    }

    pub fn tree(&self) -> &HierTree {
        &self.tree
    }

    pub fn mapping(&self) -> &LevelMapping {
        &self.mapping
    }

    pub fn num_classes(&self) -> usize {
        self.tree.num_classes()
    }

    pub fn num_layers(&self) -> usize {
        self.mapping.num_layers()
    }

    pub fn leaf_level(&self) -> usize {
        self.tree.leaf_level()
    }

    pub fn depth_count(&self) -> usize {
        self.tree.depth_count()
    }

    /// Partitions for levels `1..=leaf_level`.
    pub fn partitions(&self) -> &[SuperClassPartition] {
        &self.partitions
    }

    pub fn partition_at_level(&self, level: usize) -> Option<&SuperClassPartition> {
        level.checked_sub(1).and_then(|i| self.partitions.get(i))
    }

    /// Partition supervising `layer`.
    pub fn partition_for_layer(&self, layer: usize) -> Option<&SuperClassPartition> {
        self.mapping
            .level_of(layer)
            .and_then(|l| self.partition_at_level(l))
    }

    /// Same tree with a different mapping.
    pub fn with_mapping(&self, strategy: MappingStrategy, num_layers: usize) -> Result<Self> {
        Ok(Hierarchy {
            mapping: LevelMapping::new(strategy, num_layers, self.depth_count())?,
            ..self.clone()
        })
    }

    /// Serializes to the line-oriented text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "classes={}", self.num_classes());
        let _ = writeln!(s, "depth={}", self.depth_count());
        let _ = writeln!(s, "strategy={}", self.mapping.strategy());
        let _ = writeln!(s, "layers={}", self.num_layers());
        for p in &self.partitions {
            let _ = write!(s, "level {}:", p.level());
            for g in p.groups() {
                let items: Vec<String> = g.iter().map(|c| c.to_string()).collect();
                let _ = write!(s, " {{{}}}", items.join(","));
            }
            s.push('\n');
        }
        s
    }

    /// Parses the text format; `origin` only labels diagnostics.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        Parser::new(origin).run(text)
    }
}

pub fn save_hierarchy(hierarchy: &Hierarchy, path: &Path) -> Result<()> {
    std::fs::write(path, hierarchy.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_hierarchy(path: &Path) -> Result<Hierarchy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Hierarchy::parse(&text, path)
}

struct Parser {
    path: PathBuf,
    classes: Option<(usize, usize)>,
    depth: Option<(usize, usize)>,
    strategy: Option<MappingStrategy>,
    layers: Option<usize>,
    /// (level, line, groups) in file order.
    levels: Vec<(usize, usize, Vec<Vec<usize>>)>,
    last_line: usize,
}

impl Parser {
    fn new(path: &Path) -> Self {
        Parser {
            path: path.to_path_buf(),
            classes: None,
            depth: None,
            strategy: None,
            layers: None,
            levels: Vec::new(),
            last_line: 1,
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Validation {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn run(mut self, text: &str) -> Result<Hierarchy> {
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            self.last_line = line_no;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("level") {
                self.level_line(rest, line_no)?;
            } else if let Some((key, value)) = line.split_once('=') {
                self.header(key.trim(), value.trim(), line_no)?;
            } else {
                return Err(self.err(line_no, format!("unrecognized line `{line}`")));
            }
        }
        self.finish()
    }

    fn header(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let number = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| self.err(line, format!("`{key}` needs a non-negative integer, got `{v}`")))
        };
        let duplicate = || self.err(line, format!("duplicate `{key}` header"));
        match key {
            "classes" => {
                if self.classes.is_some() {
                    return Err(duplicate());
                }
                self.classes = Some((number(value)?, line));
            }
            "depth" => {
                if self.depth.is_some() {
                    return Err(duplicate());
                }
                self.depth = Some((number(value)?, line));
            }
            "strategy" => {
                if self.strategy.is_some() {
                    return Err(duplicate());
                }
                let s = value
                    .parse::<MappingStrategy>()
                    .map_err(|e| self.err(line, e.to_string()))?;
                self.strategy = Some(s);
            }
            "layers" => {
                if self.layers.is_some() {
                    return Err(duplicate());
                }
                let n = number(value)?;
                if n == 0 {
                    return Err(self.err(line, "`layers` must be positive"));
                }
                self.layers = Some(n);
            }
            other => return Err(self.err(line, format!("unknown header `{other}`"))),
        }
        Ok(())
    }

    fn level_line(&mut self, rest: &str, line: usize) -> Result<()> {
        let (num, groups) = rest
            .split_once(':')
            .ok_or_else(|| self.err(line, "level line needs `level <d>: {..} ...`"))?;
        let level: usize = num
            .trim()
            .parse()
            .map_err(|_| self.err(line, format!("bad level number `{}`", num.trim())))?;
        if level == 0 {
            return Err(self.err(line, "level 0 is the root and is implicit"));
        }
        if self.levels.iter().any(|(l, _, _)| *l == level) {
            return Err(self.err(line, format!("level {level} listed twice")));
        }
        let parsed = self.groups(groups, line)?;
        self.levels.push((level, line, parsed));
        Ok(())
    }

    fn groups(&self, text: &str, line: usize) -> Result<Vec<Vec<usize>>> {
        let mut groups = Vec::new();
        let mut rest = text.trim_start();
        while !rest.is_empty() {
            let body = rest
                .strip_prefix('{')
                .ok_or_else(|| self.err(line, format!("expected `{{` at `{rest}`")))?;
            let close = body
                .find('}')
                .ok_or_else(|| self.err(line, "unterminated group, missing `}`"))?;
            let mut group = Vec::new();
            for item in body[..close].split(',') {
                let item = item.trim();
                if item.is_empty() {
                    continue;
                }
                let c = item
                    .parse::<usize>()
                    .map_err(|_| self.err(line, format!("bad class index `{item}`")))?;
                group.push(c);
            }
            if group.is_empty() {
                return Err(self.err(line, "empty group `{}`"));
            }
            groups.push(group);
            rest = body[close + 1..].trim_start();
        }
        if groups.is_empty() {
            return Err(self.err(line, "level line lists no groups"));
        }
        Ok(groups)
    }

    fn finish(mut self) -> Result<Hierarchy> {
        let eof = self.last_line;
        let (k, _) = self.classes.ok_or_else(|| self.err(eof, "missing `classes=` header"))?;
        let (depth, depth_line) = self.depth.ok_or_else(|| self.err(eof, "missing `depth=` header"))?;
        let strategy = self
            .strategy
            .ok_or_else(|| self.err(eof, "missing `strategy=` header"))?;
        if k < 2 {
            return Err(self.err(eof, format!("need at least 2 classes, got {k}")));
        }
        if depth < 2 {
            return Err(self.err(depth_line, format!("depth must be at least 2, got {depth}")));
        }
        self.levels.sort_by_key(|(l, _, _)| *l);
        for (expect, (level, line, _)) in (1..).zip(&self.levels) {
            if *level != expect {
                return Err(self.err(*line, format!("level {expect} is missing")));
            }
        }
        if self.levels.len() != depth - 1 {
            return Err(self.err(
                depth_line,
                format!(
                    "depth={depth} needs levels 1..={}, found {}",
                    depth - 1,
                    self.levels.len()
                ),
            ));
        }

        let mut partitions: Vec<SuperClassPartition> = Vec::with_capacity(self.levels.len());
        for (level, line, groups) in &self.levels {
            let part = SuperClassPartition::new(groups.clone(), k, *level)
                .map_err(|e| self.err(*line, strip_arg(e)))?;
            if let Some(prev) = partitions.last() {
                for g in part.groups() {
                    let parent = prev.group_of(g[0]);
                    if g.iter().any(|&c| prev.group_of(c) != parent) {
                        return Err(self.err(
                            *line,
                            format!(
                                "level {level}: group {:?} is split across groups of level {}",
                                g,
                                level - 1
                            ),
                        ));
                    }
                }
            }
            partitions.push(part);
        }
        let (_, leaf_line, _) = self.levels.last().expect("depth >= 2");
        if partitions.last().map(|p| p.num_groups()) != Some(k) {
            return Err(self.err(
                *leaf_line,
                format!("level {}: the last level must list every class alone", depth - 1),
            ));
        }
        let levels: Vec<Vec<Vec<usize>>> = self.levels.into_iter().map(|(_, _, g)| g).collect();
        Hierarchy::from_levels(&levels, k, strategy, self.layers.unwrap_or(DEFAULT_LAYERS))
    }
}

fn strip_arg(e: Error) -> String {
    match e {
        Error::Argument(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = "\
# ten classes, vehicles vs animals
classes=10
depth = 4
strategy=balanced
level 1: {0,1,8,9} {2,3,4,5,6,7}
level 2: {0,8} {1,9} {2,3,5} {4,6,7}
level 3: {0} {1} {2} {3} {4} {5} {6} {7} {8} {9}
";

    fn parse(text: &str) -> Result<Hierarchy> {
        Hierarchy::parse(text, Path::new("test.hier"))
    }

    #[test]
    fn ten_class_three_level_file_loads() {
        let h = parse(FIG).unwrap();
        assert_eq!(h.num_classes(), 10);
        assert_eq!(h.leaf_level(), 3);
        assert_eq!(h.num_layers(), DEFAULT_LAYERS);
        assert_eq!(h.partition_at_level(1).unwrap().num_groups(), 2);
        assert_eq!(h.partition_for_layer(16).unwrap().num_groups(), 10);
    }

    #[test]
    fn text_round_trip() {
        let h = parse(FIG).unwrap();
        let again = parse(&h.to_text()).unwrap();
        assert_eq!(h, again);
        assert_eq!(h.to_text(), again.to_text());
    }

    #[test]
    fn overlap_names_level_and_line() {
        let bad = FIG.replace("{0,8} {1,9}", "{0,8} {1,8,9}");
        let err = parse(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation { line: 6, .. }), "{msg}");
        assert!(msg.contains("level 2"), "{msg}");
    }

    #[test]
    fn split_group_is_rejected() {
        let bad = FIG.replace("{0,8} {1,9}", "{0,2} {1,9} {8}");
        assert!(parse(&bad).is_err());
    }

    #[test]
    fn diagnostics_for_malformed_lines() {
        for (text, line) in [
            ("classes=2\ndepth=2\nstrategy=balanced\nlevel 1: {0} {1\n", 4),
            ("classes=2\ndepth=2\nstrategy=fancy\n", 3),
            ("classes=2\nclasses=2\n", 2),
            ("classes=two\n", 1),
            ("classes=2\ndepth=3\nstrategy=balanced\nlevel 1: {0} {1}\n", 2),
            ("classes=2\ndepth=2\nstrategy=balanced\nlevel 1: {0,1}\n", 4),
            ("hello\n", 1),
        ] {
            match parse(text) {
                Err(Error::Validation { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("expected validation error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn flat_hierarchy_maps_every_layer_to_fine_labels() {
        let h = Hierarchy::flat(10, 5).unwrap();
        assert_eq!(h.leaf_level(), 1);
        assert!((0..5).all(|l| h.partition_for_layer(l).unwrap().num_groups() == 10));
    }
}
