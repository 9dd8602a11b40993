//! Differentiable ordinal regression forest.
//!
//! Each split node routes softly with `s_n = sigmoid(fc[assign(n)])`, leaves
//! hold monotone ordinal distributions, a tree outputs the routing-weighted
//! mixture of its leaves, and the forest averages its trees.
//!
//! The free functions here work on plain slices; [`graph`] builds the same
//! computation on a [`Tape`](crate::autodiff::Tape) for training.

pub mod graph;
mod topology;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::Scalar;

pub use topology::{ForestConfig, NodeAssignment, TreeTopology, Turn};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("label {label} outside 1..={classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Vector in `[0,1]^(C-1)`; entry `c` is the probability the rank exceeds `c+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalDistribution<S>(pub Vec<S>);

impl<S: Scalar> OrdinalDistribution<S> {
    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `d[c] >= d[c+1] - tol` for every `c`.
    pub fn is_monotone(&self, tol: S) -> bool {
        self.0.windows(2).all(|w| w[0] >= w[1] - tol)
    }

    pub fn decode(&self) -> usize {
        decode_distribution(&self.0)
    }

    /// Expected rank minus one, `sum_c d[c]`.
    pub fn soft_score(&self) -> S {
        self.0.iter().copied().sum()
    }
}

/// Binary ordinal target for class `label` (1-based) out of `classes`.
pub fn encode_label<S: Scalar>(label: usize, classes: usize) -> Result<OrdinalDistribution<S>, ForestError> {
    if label == 0 || label > classes {
        return Err(ForestError::LabelOutOfRange { label, classes });
    }
    Ok(OrdinalDistribution(
        (1..classes)
            .map(|c| if label > c { S::one() } else { S::zero() })
            .collect(),
    ))
}

/// `1 +` the number of entries strictly above one half.
pub fn decode_distribution<S: Scalar>(d: &[S]) -> usize {
    let half = S::lit(0.5);
    1 + d.iter().filter(|&&v| v > half).count()
}

/// Probability of reaching each leaf given every split node's left probability.
pub fn route_probabilities<S: Scalar>(split: &[S], topology: &TreeTopology) -> Result<Vec<S>, ForestError> {
    let n = topology.split_count();
    if split.len() != n {
        return Err(ForestError::LengthMismatch {
            what: "split probabilities",
            expected: n,
            got: split.len(),
        });
    }
    let mut mu = vec![S::zero(); topology.node_count()];
    mu[0] = S::one();
    for (node, &s) in split.iter().enumerate() {
        let (l, r) = TreeTopology::children(node);
        mu[l] = mu[node] * s;
        mu[r] = mu[node] * (S::one() - s);
    }
    Ok(mu.split_off(n))
}

/// Monotone leaf distribution `pi[c] = prod_{k<=c} sigmoid(raw[k])`.
pub fn leaf_distribution<S: Scalar>(raw: &[S]) -> OrdinalDistribution<S> {
    let mut acc = S::one();
    OrdinalDistribution(
        raw.iter()
            .map(|&a| {
                acc *= a.sigmoid();
                acc
            })
            .collect(),
    )
}

/// Routing-weighted mixture of leaf distributions.
pub fn tree_output<S: Scalar>(
    routing: &[S],
    leaves: &[OrdinalDistribution<S>],
) -> Result<OrdinalDistribution<S>, ForestError> {
    if routing.len() != leaves.len() {
        return Err(ForestError::LengthMismatch {
            what: "leaf distributions",
            expected: routing.len(),
            got: leaves.len(),
        });
    }
    let width = leaves.first().map_or(0, OrdinalDistribution::len);
    let mut g = vec![S::zero(); width];
    for (&p, leaf) in routing.iter().zip(leaves) {
        if leaf.len() != width {
            return Err(ForestError::LengthMismatch {
                what: "leaf distribution",
                expected: width,
                got: leaf.len(),
            });
        }
        for (gc, &pc) in g.iter_mut().zip(leaf.as_slice()) {
            *gc += p * pc;
        }
    }
    Ok(OrdinalDistribution(g))
}

/// Unweighted mean of tree outputs.
pub fn forest_output<S: Scalar>(trees: &[OrdinalDistribution<S>]) -> Result<OrdinalDistribution<S>, ForestError> {
    let first = trees.first().ok_or_else(|| ForestError::InvalidConfig("forest has no trees".into()))?;
    let mut out = vec![S::zero(); first.len()];
    for t in trees {
        if t.len() != out.len() {
            return Err(ForestError::LengthMismatch {
                what: "tree output",
                expected: out.len(),
                got: t.len(),
            });
        }
        for (o, &v) in out.iter_mut().zip(t.as_slice()) {
            *o += v;
        }
    }
    let inv = S::one() / S::lit(trees.len() as f64);
    Ok(OrdinalDistribution(out.into_iter().map(|v| v * inv).collect()))
}

/// Per-component binary cross-entropy between a soft output and a binary target.
pub fn tree_loss<S: Scalar>(g: &[S], target: &[S]) -> Result<S, ForestError> {
    if g.len() != target.len() {
        return Err(ForestError::LengthMismatch {
            what: "target",
            expected: g.len(),
            got: target.len(),
        });
    }
    let eps = S::log_clip();
    let hi = S::one() - eps;
    Ok(g.iter()
        .zip(target)
        .map(|(&p, &d)| {
            let p = p.max(eps).min(hi);
            -(d * p.ln() + (S::one() - d) * (S::one() - p).ln())
        })
        .sum())
}

/// Mean squared deviation of per-tree ranks from the forest's rank.
pub fn tree_variance(tree_ranks: &[usize], forest_rank: usize) -> f64 {
    if tree_ranks.is_empty() {
        return 0.0;
    }
    let p = forest_rank as f64;
    tree_ranks.iter().map(|&r| (r as f64 - p).powi(2)).sum::<f64>() / tree_ranks.len() as f64
}

/// Mean squared Euclidean distance of tree outputs to their mean.
pub fn distribution_variance<S: Scalar>(trees: &[OrdinalDistribution<S>]) -> f64 {
    let Ok(mean) = forest_output(trees) else { return 0.0 };
    trees
        .iter()
        .map(|t| {
            t.as_slice()
                .iter()
                .zip(mean.as_slice())
                .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / trees.len() as f64
}

/// Raw (unconstrained) leaf parameters, one `leaves x (C-1)` matrix per tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafParams<S> {
    pub per_tree: Vec<Tensor<S>>,
}

impl<S: Scalar> LeafParams<S> {
    /// Uniform draws from `[-0.5, 0.5]`.
    pub fn init<R: Rng>(config: &ForestConfig, rng: &mut R) -> Self {
        let leaves = config.topology().leaf_count();
        let width = config.classes - 1;
        let per_tree = (0..config.trees)
            .map(|_| {
                let data = (0..leaves * width).map(|_| S::lit(rng.gen_range(-0.5..=0.5))).collect();
                Tensor::matrix(leaves, width, data).expect("leaf shape")
            })
            .collect();
        Self { per_tree }
    }

    pub fn distributions(&self, tree: usize) -> Vec<OrdinalDistribution<S>> {
        let t = &self.per_tree[tree];
        (0..t.rows()).map(|l| leaf_distribution(t.row_slice(l))).collect()
    }
}

/// Output of one tree for a single FC activation vector.
pub fn tree_output_from_fc<S: Scalar>(
    fc: &[S],
    tree: usize,
    assignment: &NodeAssignment,
    topology: &TreeTopology,
    leaves: &LeafParams<S>,
) -> Result<OrdinalDistribution<S>, ForestError> {
    let split: Vec<S> = assignment
        .tree(tree)
        .iter()
        .map(|&k| {
            fc.get(k).map(|v| v.sigmoid()).ok_or(ForestError::LengthMismatch {
                what: "fc activations",
                expected: k + 1,
                got: fc.len(),
            })
        })
        .collect::<Result<_, _>>()?;
    let routing = route_probabilities(&split, topology)?;
    tree_output(&routing, &leaves.distributions(tree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn encode_examples() {
        assert_eq!(encode_label::<f64>(1, 3).unwrap().0, vec![0.0, 0.0]);
        assert_eq!(encode_label::<f64>(2, 3).unwrap().0, vec![1.0, 0.0]);
        assert_eq!(encode_label::<f64>(5, 5).unwrap().0, vec![1.0; 4]);
        assert!(matches!(
            encode_label::<f64>(0, 3),
            Err(ForestError::LabelOutOfRange { label: 0, classes: 3 })
        ));
        assert!(encode_label::<f64>(4, 3).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_distribution(&[0.9, 0.6, 0.4, 0.1]), 3);
        assert_eq!(decode_distribution(&[0.4, 0.3]), 1);
        assert_eq!(decode_distribution(&[1.0, 1.0]), 3);
        // Exactly one half does not count.
        assert_eq!(decode_distribution(&[0.5, 0.5]), 1);
    }

    #[test]
    fn routing_examples() {
        let d1 = TreeTopology::new(1).unwrap();
        let p = route_probabilities(&[0.7], &d1).unwrap();
        assert_relative_eq!(p[0], 0.7);
        assert_relative_eq!(p[1], 0.3);

        let d2 = TreeTopology::new(2).unwrap();
        assert_eq!(route_probabilities(&[0.5; 3], &d2).unwrap(), vec![0.25; 4]);
        let p = route_probabilities(&[0.8, 0.6, 0.4], &d2).unwrap();
        for (got, want) in p.iter().zip([0.48, 0.32, 0.08, 0.12]) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }
        assert!(route_probabilities(&[0.5; 2], &d2).is_err());
    }

    #[test]
    fn leaf_distribution_examples() {
        assert_eq!(leaf_distribution(&[0.0, 0.0]).0, vec![0.5, 0.25]);
        let hi = leaf_distribution(&[20.0f64, 20.0]);
        assert!(hi.0.iter().all(|v| (v - 1.0).abs() < 1e-8));
        let lo = leaf_distribution(&[-20.0f64, 3.0]);
        assert!(lo.0.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn tree_output_examples() {
        let shared = OrdinalDistribution(vec![0.9, 0.1]);
        let g = tree_output(&[0.1, 0.2, 0.3, 0.4], &vec![shared.clone(); 4]).unwrap();
        assert_relative_eq!(g.0[0], 0.9, epsilon = 1e-15);
        assert_relative_eq!(g.0[1], 0.1, epsilon = 1e-15);

        let g = tree_output(
            &[0.7, 0.3],
            &[OrdinalDistribution(vec![1.0, 1.0]), OrdinalDistribution(vec![0.0, 0.0])],
        )
        .unwrap();
        assert_eq!(g.0, vec![0.7, 0.7]);

        let rows = [[1.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        let leaves: Vec<_> = rows.iter().map(|r| OrdinalDistribution(r.to_vec())).collect();
        assert_eq!(tree_output(&[0.25; 4], &leaves).unwrap().0, vec![0.5, 0.0]);
    }

    #[test]
    fn forest_output_examples() {
        let a = OrdinalDistribution(vec![1.0, 0.0]);
        let b = OrdinalDistribution(vec![0.0, 0.0]);
        assert_eq!(forest_output(&[a.clone(), b]).unwrap().0, vec![0.5, 0.0]);
        assert_eq!(forest_output(&[a.clone()]).unwrap(), a);
        assert_eq!(forest_output(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
        assert!(forest_output::<f64>(&[]).is_err());
    }

    #[test]
    fn tree_loss_examples() {
        let perfect: f64 = tree_loss(&[1.0 - 1e-12, 1e-12], &[1.0, 0.0]).unwrap();
        assert!(perfect.abs() < 1e-10);
        assert_relative_eq!(tree_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 1.386294, epsilon = 1e-6);
        assert_relative_eq!(tree_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), 0.210721, epsilon = 1e-6);
        // Saturated predictions stay finite.
        assert!(tree_loss::<f64>(&[0.0, 1.0], &[1.0, 0.0]).unwrap().is_finite());
        assert!(tree_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn tree_variance_examples() {
        assert_eq!(tree_variance(&[2, 2, 2], 2), 0.0);
        assert_eq!(tree_variance(&[1, 3], 2), 1.0);
        assert_eq!(tree_variance(&[3], 3), 0.0);
        let same = vec![OrdinalDistribution(vec![0.3, 0.1]); 3];
        assert!(distribution_variance(&same) < 1e-30);
        let spread = [OrdinalDistribution(vec![1.0]), OrdinalDistribution(vec![0.0])];
        assert_relative_eq!(distribution_variance(&spread), 0.25);
    }
}
