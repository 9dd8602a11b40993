//! Tree-wise weighting networks.
//!
//! One small MLP per tree maps that tree's scalar loss to a weight in (0, 1):
//! `w = sigmoid(W2 relu(W1 loss + b1) + b2)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::params::{GroupName, ParamGroup};
use crate::Scalar;

pub const DEFAULT_HIDDEN: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwwError {
    #[error("loss {0} is not finite")]
    NonFiniteLoss(f64),
    #[error("tree index {tree} out of range for {trees} weighting nets")]
    UnknownTree { tree: usize, trees: usize },
    #[error("constant weight must be positive, got {0}")]
    NonPositiveConstant(f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Parameters of all weighting nets, four tensors per tree:
/// `w1 (1 x H)`, `b1 (1 x H)`, `w2 (H x 1)`, `b2 (1 x 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwwNet<S> {
    hidden: usize,
    params: ParamGroup<S>,
}

/// Tape handles of one tree's weighting net.
#[derive(Debug, Clone, Copy)]
pub struct WeightNetVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl<S: Scalar> TwwNet<S> {
    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng>(trees: usize, hidden: usize, rng: &mut R) -> Self {
        let mut tensors = Vec::with_capacity(4 * trees);
        let out_bound = 1.0 / (hidden as f64).sqrt();
        for _ in 0..trees {
            let w1 = (0..hidden).map(|_| S::lit(rng.gen_range(-1.0..1.0))).collect();
            let w2 = (0..hidden)
                .map(|_| S::lit(rng.gen_range(-out_bound..out_bound)))
                .collect();
            tensors.push(Tensor::row(w1));
            tensors.push(Tensor::zeros(&[1, hidden]));
            tensors.push(Tensor::column(w2));
            tensors.push(Tensor::zeros(&[1, 1]));
        }
        Self {
            hidden,
            params: ParamGroup::new(GroupName::Tww, tensors),
        }
    }

    /// All parameters zero; every weight is exactly one half.
    pub fn zeros(trees: usize, hidden: usize) -> Self {
        let mut tensors = Vec::with_capacity(4 * trees);
        for _ in 0..trees {
            tensors.push(Tensor::zeros(&[1, hidden]));
            tensors.push(Tensor::zeros(&[1, hidden]));
            tensors.push(Tensor::zeros(&[hidden, 1]));
            tensors.push(Tensor::zeros(&[1, 1]));
        }
        Self {
            hidden,
            params: ParamGroup::new(GroupName::Tww, tensors),
        }
    }

    pub fn trees(&self) -> usize {
        self.params.tensors.len() / 4
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamGroup<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamGroup<S> {
        &mut self.params
    }

    /// Coordinate range of tree `t`'s parameters in the flattened group.
    pub fn tree_range(&self, t: usize) -> std::ops::Range<usize> {
        let per = 3 * self.hidden + 1;
        t * per..(t + 1) * per
    }

    pub fn weight(&self, tree: usize, loss: S) -> Result<S, TwwError> {
        if tree >= self.trees() {
            return Err(TwwError::UnknownTree {
                tree,
                trees: self.trees(),
            });
        }
        if !loss.is_finite() {
            return Err(TwwError::NonFiniteLoss(loss.to_f64_lossy()));
        }
        let p = &self.params.tensors[4 * tree..4 * tree + 4];
        let (w1, b1, w2, b2) = (p[0].as_slice(), p[1].as_slice(), p[2].as_slice(), p[3].item());
        let z = w1
            .iter()
            .zip(b1)
            .zip(w2)
            .map(|((&a, &b), &c)| (a * loss + b).max(S::zero()) * c)
            .sum::<S>()
            + b2;
        Ok(z.sigmoid())
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Vec<WeightNetVars> {
        let vars = self.params.bind(tape);
        vars.chunks(4)
            .map(|c| WeightNetVars {
                w1: c[0],
                b1: c[1],
                w2: c[2],
                b2: c[3],
            })
            .collect()
    }
}

/// Records `N x 1` weights for an `N x 1` column of losses.
pub fn weights_graph<S: Scalar>(tape: &mut Tape<S>, net: &WeightNetVars, losses: Var) -> Result<Var, TwwError> {
    let h = tape.matmul(losses, net.w1)?;
    let h = tape.add(h, net.b1)?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, net.w2)?;
    let o = tape.add(o, net.b2)?;
    Ok(tape.sigmoid(o)?)
}

/// Tree weights used in training losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Weighting<S> {
    Learned(TwwNet<S>),
    /// Fixed weight with no trainable parameters.
    Constant(S),
}

impl<S: Scalar> Weighting<S> {
    pub fn freeze_constant(c: S) -> Result<Self, TwwError> {
        if !(c > S::zero()) {
            return Err(TwwError::NonPositiveConstant(c.to_f64_lossy()));
        }
        Ok(Weighting::Constant(c))
    }

    pub fn weight(&self, tree: usize, loss: S) -> Result<S, TwwError> {
        match self {
            Weighting::Learned(net) => net.weight(tree, loss),
            Weighting::Constant(c) => {
                if !loss.is_finite() {
                    return Err(TwwError::NonFiniteLoss(loss.to_f64_lossy()));
                }
                Ok(*c)
            }
        }
    }

    pub fn learned(&self) -> Option<&TwwNet<S>> {
        match self {
            Weighting::Learned(n) => Some(n),
            Weighting::Constant(_) => None,
        }
    }

    pub fn learned_mut(&mut self) -> Option<&mut TwwNet<S>> {
        match self {
            Weighting::Learned(n) => Some(n),
            Weighting::Constant(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{compare_gradients, finite_difference_gradient};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_half() {
        let net = TwwNet::<f64>::zeros(3, 8);
        for loss in [0.0, 0.3, 12.0] {
            assert_eq!(net.weight(1, loss).unwrap(), 0.5);
        }
    }

    #[test]
    fn equal_losses_equal_weights_and_range() {
        let net = TwwNet::<f64>::init(2, 16, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(net.weight(0, 0.7).unwrap(), net.weight(0, 0.7).unwrap());
        for loss in [0.0, 0.01, 1.0, 5.0, 50.0] {
            let w = net.weight(1, loss).unwrap();
            assert!(w > 0.0 && w < 1.0);
        }
        assert!(net.weight(0, f64::NAN).is_err());
        assert!(net.weight(2, 1.0).is_err());
    }

    #[test]
    fn graph_matches_plain_and_gradient_checks() {
        let mut net = TwwNet::<f64>::init(2, 6, &mut ChaCha8Rng::seed_from_u64(4));
        // Give the biases some spread so some units are active at zero input.
        for (i, v) in net.params_mut().tensors[1].as_mut_slice().iter_mut().enumerate() {
            *v = 0.1 * (i as f64) - 0.2;
        }
        let losses = [0.4, 1.7, 0.05];
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let l = tape.constant(Tensor::column(losses.to_vec()));
        let w = weights_graph(&mut tape, &vars[1], l).unwrap();
        for (i, &loss) in losses.iter().enumerate() {
            assert!((tape.value(w).as_slice()[i] - net.weight(1, loss).unwrap()).abs() < 1e-15);
        }
        let total = tape.sum(w).unwrap();
        let grads = tape.backward(total).unwrap();
        let mut analytic = Vec::new();
        for v in [vars[1].w1, vars[1].b1, vars[1].w2, vars[1].b2] {
            grads.extend_into(v, &mut analytic);
        }
        // Tree 0 is untouched.
        assert!(grads.wrt(vars[0].w1).as_slice().iter().all(|&g| g == 0.0));

        let mut flat = Vec::new();
        net.params().flatten_into(&mut flat);
        let range = net.tree_range(1);
        let base = flat.clone();
        let numeric = finite_difference_gradient(
            |x: &[f64]| {
                let mut p = base.clone();
                p[range.clone()].copy_from_slice(x);
                let mut n = net.clone();
                n.params_mut().assign_from(&p);
                losses.iter().map(|&l| n.weight(1, l).unwrap()).sum()
            },
            &flat[net.tree_range(1)],
            1e-6,
        )
        .unwrap();
        let cmp = compare_gradients(&analytic, &numeric, 1e-5, 1e-8);
        assert!(cmp.passed, "{cmp:?}");
    }

    #[test]
    fn constant_weighting() {
        let w = Weighting::<f64>::freeze_constant(1.0).unwrap();
        assert_eq!(w.weight(7, 3.0).unwrap(), 1.0);
        assert!(w.learned().is_none());
        assert!(Weighting::<f64>::freeze_constant(0.0).is_err());
    }
}
