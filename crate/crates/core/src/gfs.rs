//! Grouped feature selection.
//!
//! FC activations are ranked in descending order and cut into as many
//! contiguous groups as a tree has split nodes. Split node `k` of every tree
//! draws its coordinate from group `k`; within a group the trees draw without
//! replacement, so a forest with `F = T * splits` uses every coordinate once.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{NodeAssignment, TreeTopology};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GfsError {
    #[error("FC activation {index} is not finite")]
    NonFinite { index: usize },
    #[error("{features} FC coordinates cannot be split into {groups} equal groups")]
    NotDivisible { features: usize, groups: usize },
    #[error("groups of {group_size} coordinates cannot serve {trees} trees without replacement")]
    GroupTooSmall { group_size: usize, trees: usize },
    #[error("need at least one {0}")]
    Empty(&'static str),
}

/// FC coordinates ordered by descending activation, ties by lower index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRanking(pub Vec<usize>);

/// Contiguous equal-size blocks of a ranking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_size(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// How trees draw from a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    #[default]
    WithoutReplacement,
    /// Independent uniform draws per tree; coordinates may repeat.
    WithReplacement,
}

pub fn rank_features<S: Scalar>(fc: &[S]) -> Result<FeatureRanking, GfsError> {
    if fc.is_empty() {
        return Err(GfsError::Empty("FC activation"));
    }
    if let Some(index) = fc.iter().position(|v| !v.is_finite()) {
        return Err(GfsError::NonFinite { index });
    }
    let mut order: Vec<usize> = (0..fc.len()).collect();
    // Stable sort keeps lower indices first among equal activations.
    order.sort_by(|&a, &b| fc[b].partial_cmp(&fc[a]).expect("finite activations"));
    Ok(FeatureRanking(order))
}

pub fn partition_groups(ranking: &FeatureRanking, groups: usize) -> Result<GroupPartition, GfsError> {
    let features = ranking.0.len();
    if groups == 0 {
        return Err(GfsError::Empty("group"));
    }
    if !features.is_multiple_of(groups) {
        return Err(GfsError::NotDivisible { features, groups });
    }
    let size = features / groups;
    Ok(GroupPartition {
        groups: ranking.0.chunks(size).map(<[usize]>::to_vec).collect(),
    })
}

/// Draws each tree's split-node coordinates from the groups, node `k` from group `k`.
pub fn select_dynamic<R: Rng>(
    partition: &GroupPartition,
    trees: usize,
    selection: Selection,
    rng: &mut R,
) -> Result<NodeAssignment, GfsError> {
    if trees == 0 {
        return Err(GfsError::Empty("tree"));
    }
    let size = partition.group_size();
    if selection == Selection::WithoutReplacement && size < trees {
        return Err(GfsError::GroupTooSmall { group_size: size, trees });
    }
    let mut per_tree = vec![Vec::with_capacity(partition.len()); trees];
    for group in partition.groups() {
        match selection {
            Selection::WithoutReplacement => {
                let picks = index::sample(rng, size, trees);
                for (t, pick) in picks.iter().enumerate() {
                    per_tree[t].push(group[pick]);
                }
            }
            Selection::WithReplacement => {
                for nodes in per_tree.iter_mut() {
                    nodes.push(group[rng.gen_range(0..size)]);
                }
            }
        }
    }
    let topology = topology_for(partition.len())?;
    let fc_dim = size * partition.len();
    Ok(NodeAssignment::new(per_tree, &topology, fc_dim).expect("coordinates drawn from partition"))
}

/// Full dynamic-forest construction from one FC activation vector.
pub fn dynamic_assignment<S: Scalar, R: Rng>(
    fc: &[S],
    topology: &TreeTopology,
    trees: usize,
    selection: Selection,
    rng: &mut R,
) -> Result<NodeAssignment, GfsError> {
    let ranking = rank_features(fc)?;
    let partition = partition_groups(&ranking, topology.split_count())?;
    select_dynamic(&partition, trees, selection, rng)
}

/// Uniform coordinate per split node, with replacement across nodes.
pub fn fixed_random_assignment<R: Rng>(
    fc_dim: usize,
    topology: &TreeTopology,
    trees: usize,
    rng: &mut R,
) -> Result<NodeAssignment, GfsError> {
    if fc_dim == 0 {
        return Err(GfsError::Empty("FC coordinate"));
    }
    let per_tree = (0..trees)
        .map(|_| (0..topology.split_count()).map(|_| rng.gen_range(0..fc_dim)).collect())
        .collect();
    Ok(NodeAssignment::new(per_tree, topology, fc_dim).expect("coordinates below fc_dim"))
}

fn topology_for(groups: usize) -> Result<TreeTopology, GfsError> {
    let depth = (groups + 1).trailing_zeros() as usize;
    if (1usize << depth) - 1 != groups {
        return Err(GfsError::NotDivisible {
            features: groups,
            groups: groups.next_power_of_two() - 1,
        });
    }
    TreeTopology::new(depth).map_err(|_| GfsError::Empty("split node"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_features(&[0.1, 0.9, 0.5]).unwrap().0, vec![1, 2, 0]);
        assert_eq!(rank_features(&[2.0; 4]).unwrap().0, vec![0, 1, 2, 3]);
        assert_eq!(rank_features(&[3.0, 1.0, 2.0, 0.0]).unwrap().0, vec![0, 2, 1, 3]);
        assert_eq!(rank_features(&[0.0, f64::NAN]), Err(GfsError::NonFinite { index: 1 }));
    }

    #[test]
    fn partition_examples() {
        let r = FeatureRanking((0..28).collect());
        let p = partition_groups(&r, 7).unwrap();
        assert_eq!(p.len(), 7);
        assert!(p.groups().iter().all(|g| g.len() == 4));
        assert_eq!(p.groups()[1], vec![4, 5, 6, 7]);

        let p = partition_groups(&FeatureRanking(vec![2, 0, 1]), 3).unwrap();
        assert_eq!(p.groups(), &[vec![2], vec![0], vec![1]]);

        let p = partition_groups(&FeatureRanking((0..8).collect()), 2).unwrap();
        assert_eq!(p.group_size(), 4);

        assert_eq!(
            partition_groups(&FeatureRanking((0..10).collect()), 7),
            Err(GfsError::NotDivisible { features: 10, groups: 7 })
        );
    }

    #[test]
    fn dynamic_selection_covers_every_coordinate() {
        let topo = TreeTopology::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fc: Vec<f64> = (0..28).map(|i| ((i * 7919) % 31) as f64).collect();
        let a = dynamic_assignment(&fc, &topo, 4, Selection::WithoutReplacement, &mut rng).unwrap();
        let mut used = a.coordinates();
        used.sort_unstable();
        assert_eq!(used, (0..28).collect::<Vec<_>>());
    }

    #[test]
    fn node_k_draws_from_group_k() {
        let topo = TreeTopology::new(2).unwrap();
        let fc: Vec<f64> = (0..12).map(|i| -(i as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = dynamic_assignment(&fc, &topo, 3, Selection::WithoutReplacement, &mut rng).unwrap();
        for nodes in a.iter() {
            for (k, &c) in nodes.iter().enumerate() {
                assert_eq!(c / 4, k);
            }
        }
    }

    #[test]
    fn seeded_selection_is_reproducible() {
        let topo = TreeTopology::new(3).unwrap();
        let fc: Vec<f64> = (0..28).map(|i| (i as f64).sin()).collect();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            dynamic_assignment(&fc, &topo, 4, Selection::WithoutReplacement, &mut rng).unwrap()
        };
        assert_eq!(draw(11), draw(11));
    }

    #[test]
    fn single_tree_and_small_groups() {
        let p = partition_groups(&FeatureRanking((0..3).collect()), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = select_dynamic(&p, 1, Selection::WithoutReplacement, &mut rng).unwrap();
        assert_eq!(a.tree(0), &[0, 1, 2]);
        assert_eq!(
            select_dynamic(&p, 2, Selection::WithoutReplacement, &mut rng),
            Err(GfsError::GroupTooSmall { group_size: 1, trees: 2 })
        );
        let a = select_dynamic(&p, 2, Selection::WithReplacement, &mut rng).unwrap();
        assert_eq!(a.tree(1), &[0, 1, 2]);
    }

    #[test]
    fn fixed_assignment_examples() {
        let topo = TreeTopology::new(3).unwrap();
        let draw = |seed| fixed_random_assignment(28, &topo, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(draw(5), draw(5));
        assert_eq!(draw(5).coordinates().len(), 28);
        let one = fixed_random_assignment(1, &topo, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(one.coordinates().iter().all(|&c| c == 0));
    }
}
