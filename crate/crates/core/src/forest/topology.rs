use serde::{Deserialize, Serialize};

use super::ForestError;

/// Largest depth accepted; deeper trees make the leaf count impractical.
pub const MAX_DEPTH: usize = 16;

/// Full binary tree of a given depth, nodes indexed breadth-first.
///
/// Node `n` has children `2n+1` and `2n+2`; split nodes occupy
/// `0..2^D-1` and leaves the final `2^D` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeTopology {
    depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Left,
    Right,
}

impl TreeTopology {
    pub fn new(depth: usize) -> Result<Self, ForestError> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(ForestError::InvalidConfig(format!(
                "tree depth must be in 1..={MAX_DEPTH}, got {depth}"
            )));
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn split_count(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    pub fn node_count(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    pub fn children(node: usize) -> (usize, usize) {
        (2 * node + 1, 2 * node + 2)
    }

    /// Root-to-leaf sequence of `(split node, turn)` for leaf `leaf` (0-based).
    pub fn path(&self, leaf: usize) -> Vec<(usize, Turn)> {
        let mut node = self.split_count() + leaf;
        let mut steps = Vec::with_capacity(self.depth);
        while node > 0 {
            let parent = (node - 1) / 2;
            let turn = if node % 2 == 1 { Turn::Left } else { Turn::Right };
            steps.push((parent, turn));
            node = parent;
        }
        steps.reverse();
        steps
    }
}

/// Forest shape: tree count, depth, class count and FC output width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub depth: usize,
    pub classes: usize,
    pub fc_dim: usize,
}

impl ForestConfig {
    /// One FC coordinate per split node in the forest.
    pub fn with_split_fc(trees: usize, depth: usize, classes: usize) -> Result<Self, ForestError> {
        let topology = TreeTopology::new(depth)?;
        let cfg = Self {
            trees,
            depth,
            classes,
            fc_dim: trees * topology.split_count(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn topology(&self) -> TreeTopology {
        TreeTopology::new(self.depth).expect("validated depth")
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        TreeTopology::new(self.depth)?;
        if self.trees == 0 {
            return Err(ForestError::InvalidConfig("tree count must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(ForestError::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.fc_dim == 0 {
            return Err(ForestError::InvalidConfig("FC width must be at least 1".into()));
        }
        Ok(())
    }

    /// Ordinal vector width, `C - 1`.
    pub fn width(&self) -> usize {
        self.classes - 1
    }
}

/// For every tree, the FC coordinate feeding each split node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAssignment {
    per_tree: Vec<Vec<usize>>,
}

impl NodeAssignment {
    pub fn new(per_tree: Vec<Vec<usize>>, topology: &TreeTopology, fc_dim: usize) -> Result<Self, ForestError> {
        for (t, nodes) in per_tree.iter().enumerate() {
            if nodes.len() != topology.split_count() {
                return Err(ForestError::LengthMismatch {
                    what: "tree assignment",
                    expected: topology.split_count(),
                    got: nodes.len(),
                });
            }
            if let Some(&bad) = nodes.iter().find(|&&k| k >= fc_dim) {
                return Err(ForestError::InvalidConfig(format!(
                    "tree {t} uses FC coordinate {bad} but FC width is {fc_dim}"
                )));
            }
        }
        Ok(Self { per_tree })
    }

    pub fn trees(&self) -> usize {
        self.per_tree.len()
    }

    pub fn tree(&self, t: usize) -> &[usize] {
        &self.per_tree[t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.per_tree.iter().map(Vec::as_slice)
    }

    /// All assigned coordinates, tree-major.
    pub fn coordinates(&self) -> Vec<usize> {
        self.per_tree.iter().flatten().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let t = TreeTopology::new(3).unwrap();
        assert_eq!(t.split_count(), 7);
        assert_eq!(t.leaf_count(), 8);
        assert_eq!(t.node_count(), 15);
        assert!(TreeTopology::new(0).is_err());
    }

    #[test]
    fn paths_follow_breadth_first_layout() {
        let t = TreeTopology::new(2).unwrap();
        assert_eq!(t.path(0), vec![(0, Turn::Left), (1, Turn::Left)]);
        assert_eq!(t.path(1), vec![(0, Turn::Left), (1, Turn::Right)]);
        assert_eq!(t.path(2), vec![(0, Turn::Right), (2, Turn::Left)]);
        assert_eq!(t.path(3), vec![(0, Turn::Right), (2, Turn::Right)]);
    }

    #[test]
    fn default_config_has_one_coordinate_per_split() {
        let cfg = ForestConfig::with_split_fc(4, 3, 3).unwrap();
        assert_eq!(cfg.fc_dim, 28);
        assert_eq!(cfg.width(), 2);
    }

    #[test]
    fn assignment_validation() {
        let t = TreeTopology::new(1).unwrap();
        assert!(NodeAssignment::new(vec![vec![0], vec![2]], &t, 2).is_err());
        assert!(NodeAssignment::new(vec![vec![0, 1]], &t, 2).is_err());
        let a = NodeAssignment::new(vec![vec![0], vec![1]], &t, 2).unwrap();
        assert_eq!(a.coordinates(), vec![0, 1]);
    }
}
