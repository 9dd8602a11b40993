//! Tape-recorded forest computations for a batch of FC activations.

use super::{ForestError, NodeAssignment, TreeTopology};
use crate::autodiff::{Tape, Var};
use crate::Scalar;

/// `leaves x (C-1)` raw parameters to monotone distributions via cumulative
/// sigmoid products along each row.
pub fn leaf_distributions<S: Scalar>(tape: &mut Tape<S>, raw: Var) -> Result<Var, ForestError> {
    let width = tape.value(raw).cols();
    let sig = tape.sigmoid(raw)?;
    let mut cols = Vec::with_capacity(width);
    let mut acc = tape.column(sig, 0)?;
    cols.push(acc);
    for c in 1..width {
        let next = tape.column(sig, c)?;
        acc = tape.mul(acc, next)?;
        cols.push(acc);
    }
    if cols.len() == 1 {
        return Ok(cols[0]);
    }
    Ok(tape.concat(&cols, 1)?)
}

/// `N x leaves` routing probabilities of one tree. `split` holds the sigmoid
/// of every FC coordinate (`N x F`).
pub fn routing<S: Scalar>(
    tape: &mut Tape<S>,
    split: Var,
    nodes: &[usize],
    topology: &TreeTopology,
) -> Result<Var, ForestError> {
    let n = topology.split_count();
    if nodes.len() != n {
        return Err(ForestError::LengthMismatch {
            what: "tree assignment",
            expected: n,
            got: nodes.len(),
        });
    }
    let mut mu: Vec<Option<Var>> = vec![None; topology.node_count()];
    for (node, &coord) in nodes.iter().enumerate() {
        let s = tape.column(split, coord)?;
        let not_s = tape.one_minus(s)?;
        let (l, r) = TreeTopology::children(node);
        match mu[node] {
            None => {
                mu[l] = Some(s);
                mu[r] = Some(not_s);
            }
            Some(m) => {
                mu[l] = Some(tape.mul(m, s)?);
                mu[r] = Some(tape.mul(m, not_s)?);
            }
        }
    }
    let leaves: Vec<Var> = mu[n..].iter().map(|v| v.expect("leaf reached")).collect();
    Ok(tape.concat(&leaves, 1)?)
}

/// Per-tree soft outputs (`N x (C-1)` each) for a batch of FC activations.
pub fn tree_outputs<S: Scalar>(
    tape: &mut Tape<S>,
    fc: Var,
    leaf_raw: &[Var],
    assignment: &NodeAssignment,
    topology: &TreeTopology,
) -> Result<Vec<Var>, ForestError> {
    if leaf_raw.len() != assignment.trees() {
        return Err(ForestError::LengthMismatch {
            what: "leaf parameter sets",
            expected: assignment.trees(),
            got: leaf_raw.len(),
        });
    }
    let split = tape.sigmoid(fc)?;
    let mut outputs = Vec::with_capacity(leaf_raw.len());
    for (t, &raw) in leaf_raw.iter().enumerate() {
        let p = routing(tape, split, assignment.tree(t), topology)?;
        let pi = leaf_distributions(tape, raw)?;
        outputs.push(tape.matmul(p, pi)?);
    }
    Ok(outputs)
}

/// Per-sample cross-entropy (`N x 1`) of a soft output against binary targets.
pub fn tree_loss<S: Scalar>(tape: &mut Tape<S>, g: Var, target: Var) -> Result<Var, ForestError> {
    if tape.value(g).shape() != tape.value(target).shape() {
        return Err(ForestError::LengthMismatch {
            what: "target",
            expected: tape.value(g).len(),
            got: tape.value(target).len(),
        });
    }
    let eps = S::log_clip();
    let gc = tape.clip(g, eps, S::one() - eps)?;
    let ln_g = tape.ln(gc)?;
    let not_g = tape.one_minus(gc)?;
    let ln_not_g = tape.ln(not_g)?;
    let not_d = tape.one_minus(target)?;
    let pos = tape.mul(target, ln_g)?;
    let neg = tape.mul(not_d, ln_not_g)?;
    let ll = tape.add(pos, neg)?;
    let ll = tape.row_sum(ll)?;
    Ok(tape.scale(ll, -S::one())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::forest::{leaf_distribution, route_probabilities, tree_loss as plain_loss, tree_output};

    #[test]
    fn graph_matches_plain_functions() {
        let topo = TreeTopology::new(2).unwrap();
        let fc = vec![0.3, -1.2, 0.8, 2.0];
        let assign = NodeAssignment::new(vec![vec![0, 3, 1], vec![2, 2, 0]], &topo, 4).unwrap();
        let raws = [
            Tensor::matrix(4, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.0, 0.2, 0.2]).unwrap(),
            Tensor::matrix(4, 2, vec![-0.1, 0.2, 0.0, -0.4, 0.5, 0.1, -0.3, 0.3]).unwrap(),
        ];

        let mut tape = Tape::new();
        let fcv = tape.param(Tensor::row(fc.clone()));
        let rv: Vec<Var> = raws.iter().map(|r| tape.param(r.clone())).collect();
        let outs = tree_outputs(&mut tape, fcv, &rv, &assign, &topo).unwrap();

        for t in 0..2 {
            let split: Vec<f64> = assign.tree(t).iter().map(|&k| fc[k].sigmoid()).collect();
            let routing = route_probabilities(&split, &topo).unwrap();
            let leaves: Vec<_> = (0..4).map(|l| leaf_distribution(raws[t].row_slice(l))).collect();
            let want = tree_output(&routing, &leaves).unwrap();
            for (a, b) in tape.value(outs[t]).as_slice().iter().zip(want.as_slice()) {
                assert!((a - b).abs() < 1e-15);
            }
            let target = tape.constant(Tensor::row(vec![1.0, 0.0]));
            let l = tree_loss(&mut tape, outs[t], target).unwrap();
            let want_loss = plain_loss(want.as_slice(), &[1.0, 0.0]).unwrap();
            assert!((tape.value(l).item() - want_loss).abs() < 1e-14);
        }
    }

    #[test]
    fn single_class_boundary_works() {
        // C = 2 gives one ordinal component.
        let mut tape = Tape::<f64>::new();
        let raw = tape.param(Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap());
        let pi = leaf_distributions(&mut tape, raw).unwrap();
        assert_eq!(tape.value(pi).shape(), &[2, 1]);
        assert_eq!(tape.value(pi).get(0, 0), 0.5);
    }
}
