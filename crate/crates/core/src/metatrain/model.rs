use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::backbone::Backbone;
use crate::data::Dataset;
use crate::forest::{self, encode_label, ForestConfig, ForestError, LeafParams, NodeAssignment, OrdinalDistribution};
use crate::params::{GroupName, ParamGroup};
use crate::Scalar;

/// Output head on top of the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Forest,
    /// Plain `C`-way softmax classifier.
    Softmax,
}

/// Trainable parameters `theta`: backbone plus raw leaf parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model<S> {
    pub forest: ForestConfig,
    pub head: Head,
    pub backbone: Backbone<S>,
    pub leaves: ParamGroup<S>,
}

/// Tape handles of a bound model.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub backbone: Vec<Var>,
    pub leaves: Vec<Var>,
}

impl ModelVars {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.backbone.iter().chain(&self.leaves).copied()
    }
}

impl<S: Scalar> Model<S> {
    pub fn init<R: Rng>(input_dim: usize, hidden: &[usize], forest: ForestConfig, head: Head, rng: &mut R) -> Self {
        let out = match head {
            Head::Forest => forest.fc_dim,
            Head::Softmax => forest.classes,
        };
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(out);
        let backbone = Backbone::init(&widths, rng);
        let leaves = match head {
            Head::Forest => LeafParams::init(&forest, rng).per_tree,
            Head::Softmax => Vec::new(),
        };
        Self {
            forest,
            head,
            backbone,
            leaves: ParamGroup::new(GroupName::Leaves, leaves),
        }
    }

    pub fn theta_len(&self) -> usize {
        self.backbone.params().len() + self.leaves.len()
    }

    pub fn theta(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.theta_len());
        self.backbone.params().flatten_into(&mut out);
        self.leaves.flatten_into(&mut out);
        out
    }

    pub fn set_theta(&mut self, theta: &[S]) {
        let rest = self.backbone.params_mut().assign_from(theta);
        let rest = self.leaves.assign_from(rest);
        debug_assert!(rest.is_empty());
    }

    pub fn with_theta(&self, theta: &[S]) -> Self {
        let mut m = self.clone();
        m.set_theta(theta);
        m
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> ModelVars {
        ModelVars {
            backbone: self.backbone.params().bind(tape),
            leaves: self.leaves.bind(tape),
        }
    }

    pub fn bind_constant(&self, tape: &mut Tape<S>) -> ModelVars {
        ModelVars {
            backbone: self.backbone.params().bind_constant(tape),
            leaves: self.leaves.bind_constant(tape),
        }
    }

    pub fn leaf_params(&self) -> LeafParams<S> {
        LeafParams {
            per_tree: self.leaves.tensors.clone(),
        }
    }

    /// Plain per-sample forest prediction (tree outputs and their mean).
    pub fn predict_one(&self, x: &[S], assignment: &NodeAssignment) -> Result<Prediction<S>, ForestError> {
        let fc = self.backbone.eval(x);
        let topology = self.forest.topology();
        let leaves = self.leaf_params();
        let trees = (0..self.forest.trees)
            .map(|t| forest::tree_output_from_fc(&fc, t, assignment, &topology, &leaves))
            .collect::<Result<Vec<_>, _>>()?;
        let output = forest::forest_output(&trees)?;
        Ok(Prediction { trees, output })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<S> {
    pub trees: Vec<OrdinalDistribution<S>>,
    pub output: OrdinalDistribution<S>,
}

/// Mini-batch of features, ordinal targets and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub x: Tensor<S>,
    /// `N x (C-1)` binary ordinal targets.
    pub targets: Tensor<S>,
    /// `N x C` one-hot targets.
    pub one_hot: Tensor<S>,
    pub labels: Vec<usize>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_indices(dataset: &Dataset, indices: &[usize]) -> Result<Self, ForestError> {
        let c = dataset.classes;
        let n = indices.len();
        let mut x = Vec::with_capacity(n * dataset.dim);
        let mut targets = Vec::with_capacity(n * (c - 1));
        let mut one_hot = vec![S::zero(); n * c];
        let mut labels = Vec::with_capacity(n);
        for (row, &i) in indices.iter().enumerate() {
            let s = &dataset.samples[i];
            x.extend(s.features.iter().map(|&v| S::lit(v)));
            targets.extend(encode_label::<S>(s.label, c)?.0);
            one_hot[row * c + s.label - 1] = S::one();
            labels.push(s.label);
        }
        Ok(Self {
            x: Tensor::matrix(n, dataset.dim, x)?,
            targets: Tensor::matrix(n, c - 1, targets)?,
            one_hot: Tensor::matrix(n, c, one_hot)?,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Single-sample batch for row `i`.
    pub fn row(&self, i: usize) -> Self {
        Self {
            x: Tensor::row(self.x.row_slice(i).to_vec()),
            targets: Tensor::row(self.targets.row_slice(i).to_vec()),
            one_hot: Tensor::row(self.one_hot.row_slice(i).to_vec()),
            labels: vec![self.labels[i]],
        }
    }
}
