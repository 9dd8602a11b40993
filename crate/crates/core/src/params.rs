use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupName {
    Backbone,
    Leaves,
    Tww,
}

/// Named set of trainable tensors, flattened in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup<S> {
    pub name: GroupName,
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamGroup<S> {
    pub fn new(name: GroupName, tensors: Vec<Tensor<S>>) -> Self {
        Self { name, tensors }
    }

    /// Total scalar count.
    pub fn len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten_into(&self, out: &mut Vec<S>) {
        for t in &self.tensors {
            out.extend_from_slice(t.as_slice());
        }
    }

    /// Overwrites values from `flat`, returning the unread remainder.
    pub fn assign_from<'a>(&mut self, flat: &'a [S]) -> &'a [S] {
        let mut rest = flat;
        for t in &mut self.tensors {
            let n = t.len();
            t.as_mut_slice().copy_from_slice(&rest[..n]);
            rest = &rest[n..];
        }
        rest
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Registers every tensor as a constant.
    pub fn bind_constant(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }
}

/// Flattens gradients of bound variables in the same order as `flatten_into`.
pub fn collect_gradients<S: Scalar>(grads: &Gradients<S>, vars: &[Var], out: &mut Vec<S>) {
    for &v in vars {
        grads.extend_into(v, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_and_assign_round_trip() {
        let mut g = ParamGroup::new(
            GroupName::Leaves,
            vec![Tensor::row(vec![1.0, 2.0]), Tensor::column(vec![3.0])],
        );
        let mut flat = Vec::new();
        g.flatten_into(&mut flat);
        assert_eq!(flat, vec![1.0, 2.0, 3.0]);
        let rest = g.assign_from(&[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(rest, &[7.0]);
        assert_eq!(g.tensors[1].as_slice(), &[6.0]);
        assert_eq!(g.len(), 3);
    }
}
