//! Single-iteration building blocks of the bilevel update.

use rand::Rng;

use super::model::{Batch, Model, ModelVars};
use super::TrainError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::backbone::Backbone;
use crate::forest::{graph, NodeAssignment};
use crate::gfs::{self, Selection};
use crate::optim::{sgd_step, Adam};
use crate::params::collect_gradients;
use crate::twwnet::{weights_graph, TwwNet, Weighting};
use crate::Scalar;

/// Tape handles of one forest forward over a batch.
#[derive(Debug, Clone)]
pub struct ForestPass {
    pub fc: Var,
    pub outputs: Vec<Var>,
    /// Per-tree `N x 1` losses.
    pub losses: Vec<Var>,
}

pub fn forest_pass<S: Scalar>(
    tape: &mut Tape<S>,
    model: &Model<S>,
    vars: &ModelVars,
    batch: &Batch<S>,
    assignment: &NodeAssignment,
) -> Result<ForestPass, TrainError> {
    let x = tape.constant(batch.x.clone());
    let fc = Backbone::forward(tape, &vars.backbone, x)?;
    let topology = model.forest.topology();
    let outputs = graph::tree_outputs(tape, fc, &vars.leaves, assignment, &topology)?;
    let target = tape.constant(batch.targets.clone());
    let losses = outputs
        .iter()
        .map(|&g| graph::tree_loss(tape, g, target))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ForestPass { fc, outputs, losses })
}

/// Loss value and its gradient over `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<S> {
    /// Weighted objective that was differentiated.
    pub loss: S,
    /// Plain mean of all per-tree losses (equals `loss` under unit weights).
    pub mean_loss: S,
    pub grad: Vec<S>,
    /// Sample-major per-tree losses, `i * T + t`.
    pub tree_losses: Vec<S>,
}

/// `(1/N) sum_i (1/T) sum_t w_t^i R_t^i` and its `theta` gradient, with the
/// weights computed from the loss values and then held constant.
pub fn weighted_train_loss<S: Scalar>(
    model: &Model<S>,
    weighting: &Weighting<S>,
    batch: &Batch<S>,
    assignment: &NodeAssignment,
) -> Result<LossGrad<S>, TrainError> {
    weighted_loss_with(model, batch, assignment, |_, t, r| Ok(weighting.weight(t, r)?))
}

/// As [`weighted_train_loss`] with explicit sample-major weights.
pub fn fixed_weight_loss<S: Scalar>(
    model: &Model<S>,
    weights: &[S],
    batch: &Batch<S>,
    assignment: &NodeAssignment,
) -> Result<LossGrad<S>, TrainError> {
    let expected = batch.len() * model.forest.trees;
    if weights.len() != expected {
        return Err(TrainError::Length {
            what: "tree weights",
            expected,
            got: weights.len(),
        });
    }
    let trees = model.forest.trees;
    weighted_loss_with(model, batch, assignment, |i, t, _| Ok(weights[i * trees + t]))
}

fn weighted_loss_with<S: Scalar, W>(
    model: &Model<S>,
    batch: &Batch<S>,
    assignment: &NodeAssignment,
    weight: W,
) -> Result<LossGrad<S>, TrainError>
where
    W: Fn(usize, usize, S) -> Result<S, TrainError>,
{
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let n = batch.len();
    let trees = model.forest.trees;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let pass = forest_pass(&mut tape, model, &vars, batch, assignment)?;
    let mut tree_losses = vec![S::zero(); n * trees];
    let mut total = None;
    for (t, &loss) in pass.losses.iter().enumerate() {
        let values = tape.value(loss).as_slice().to_vec();
        let mut w = Vec::with_capacity(n);
        for (i, &r) in values.iter().enumerate() {
            tree_losses[i * trees + t] = r;
            w.push(weight(i, t, r)?);
        }
        let w = tape.constant(Tensor::column(w));
        let weighted = tape.mul(loss, w)?;
        let s = tape.sum(weighted)?;
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let scale = S::one() / S::lit((n * trees) as f64);
    let objective = tape.scale(total.expect("at least one tree"), scale)?;
    let grads = tape.backward(objective)?;
    let mut grad = Vec::with_capacity(model.theta_len());
    collect_gradients(&grads, &vars.all().collect::<Vec<_>>(), &mut grad);
    let mean_loss = tree_losses.iter().copied().sum::<S>() * scale;
    Ok(LossGrad {
        loss: tape.value(objective).item(),
        mean_loss,
        grad,
        tree_losses,
    })
}

/// Mean softmax cross-entropy of the plain classifier head and its gradient.
pub fn softmax_loss<S: Scalar>(model: &Model<S>, batch: &Batch<S>) -> Result<LossGrad<S>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let n = batch.len();
    let c = model.forest.classes;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let x = tape.constant(batch.x.clone());
    let logits = Backbone::forward(&mut tape, &vars.backbone, x)?;
    // Row maxima are held constant; they cancel in the log-softmax.
    let z = tape.value(logits).clone();
    let mut shift = Vec::with_capacity(n * c);
    for i in 0..n {
        let m = z.row_slice(i).iter().copied().fold(S::neg_infinity(), S::max);
        shift.extend(std::iter::repeat_n(m, c));
    }
    let shift = tape.constant(Tensor::matrix(n, c, shift)?);
    let zc = tape.sub(logits, shift)?;
    let e = tape.exp(zc)?;
    let denom = tape.row_sum(e)?;
    let lse = tape.ln(denom)?;
    let onehot = tape.constant(batch.one_hot.clone());
    let picked = tape.mul(zc, onehot)?;
    let picked = tape.row_sum(picked)?;
    let logp = tape.sub(picked, lse)?;
    let mean = tape.mean(logp)?;
    let loss = tape.scale(mean, -S::one())?;
    let grads = tape.backward(loss)?;
    let mut grad = Vec::with_capacity(model.theta_len());
    collect_gradients(&grads, &vars.all().collect::<Vec<_>>(), &mut grad);
    let value = tape.value(loss).item();
    Ok(LossGrad {
        loss: value,
        mean_loss: value,
        grad,
        tree_losses: Vec::new(),
    })
}

/// Per-sample, per-tree loss gradients for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGradients<S> {
    pub samples: usize,
    pub trees: usize,
    /// `R_t^i`, sample-major.
    pub losses: Vec<S>,
    /// Flattened `grad_theta R_t^i`, sample-major.
    pub grads: Vec<Vec<S>>,
}

impl<S: Scalar> TreeGradients<S> {
    pub fn index(&self, sample: usize, tree: usize) -> usize {
        sample * self.trees + tree
    }

    pub fn loss(&self, sample: usize, tree: usize) -> S {
        self.losses[self.index(sample, tree)]
    }

    pub fn grad(&self, sample: usize, tree: usize) -> &[S] {
        &self.grads[self.index(sample, tree)]
    }

    pub fn param_len(&self) -> usize {
        self.grads.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `(1/T) sum_t grad R_t^i` for one sample.
    pub fn sample_mean(&self, sample: usize) -> Vec<S> {
        let mut out = vec![S::zero(); self.param_len()];
        for t in 0..self.trees {
            for (o, &g) in out.iter_mut().zip(self.grad(sample, t)) {
                *o += g;
            }
        }
        let scale = S::one() / S::lit(self.trees as f64);
        out.iter_mut().for_each(|v| *v *= scale);
        out
    }

    pub fn mean_loss(&self) -> S {
        self.losses.iter().copied().sum::<S>() / S::lit(self.losses.len() as f64)
    }
}

/// One graph per sample, one backward per tree.
pub fn tree_gradients<S: Scalar>(
    model: &Model<S>,
    batch: &Batch<S>,
    assignment: &NodeAssignment,
) -> Result<TreeGradients<S>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let trees = model.forest.trees;
    let mut losses = Vec::with_capacity(batch.len() * trees);
    let mut grads = Vec::with_capacity(batch.len() * trees);
    for i in 0..batch.len() {
        let one = batch.row(i);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let all: Vec<Var> = vars.all().collect();
        let pass = forest_pass(&mut tape, model, &vars, &one, assignment)?;
        for &loss in &pass.losses {
            let r = tape.value(loss).item();
            let g = tape.backward(loss)?;
            let mut flat = Vec::with_capacity(model.theta_len());
            collect_gradients(&g, &all, &mut flat);
            if !r.is_finite() || flat.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFinite {
                    iteration: None,
                    what: "per-tree training gradient",
                });
            }
            losses.push(r);
            grads.push(flat);
        }
    }
    Ok(TreeGradients {
        samples: batch.len(),
        trees,
        losses,
        grads,
    })
}

/// Weights `w_t^i` for the stored losses, sample-major.
pub fn tree_weights<S: Scalar>(weighting: &Weighting<S>, stored: &TreeGradients<S>) -> Result<Vec<S>, TrainError> {
    (0..stored.samples)
        .flat_map(|i| (0..stored.trees).map(move |t| (i, t)))
        .map(|(i, t)| Ok(weighting.weight(t, stored.loss(i, t))?))
        .collect()
}

/// `(1/(NT)) sum_i sum_t w_t^i grad R_t^i`.
pub fn weighted_gradient<S: Scalar>(stored: &TreeGradients<S>, weights: &[S]) -> Result<Vec<S>, TrainError> {
    if stored.is_empty() {
        return Err(TrainError::MissingGradients);
    }
    if weights.len() != stored.grads.len() {
        return Err(TrainError::Length {
            what: "tree weights",
            expected: stored.grads.len(),
            got: weights.len(),
        });
    }
    let mut out = vec![S::zero(); stored.param_len()];
    for (g, &w) in stored.grads.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(g) {
            *o += w * v;
        }
    }
    let scale = S::one() / S::lit(stored.grads.len() as f64);
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// `theta_hat = theta - alpha * weighted_gradient`, a plain first-order probe.
pub fn pseudo_update<S: Scalar>(
    theta: &[S],
    stored: &TreeGradients<S>,
    weights: &[S],
    alpha: S,
) -> Result<Vec<S>, TrainError> {
    let g = weighted_gradient(stored, weights)?;
    if g.len() != theta.len() {
        return Err(TrainError::Length {
            what: "theta",
            expected: g.len(),
            got: theta.len(),
        });
    }
    Ok(theta.iter().zip(&g).map(|(&p, &d)| p - alpha * d).collect())
}

/// FC activations averaged over the batch.
pub fn mean_activation<S: Scalar>(model: &Model<S>, batch: &Batch<S>) -> Vec<S> {
    let mut acc = vec![S::zero(); model.backbone.output_dim()];
    for i in 0..batch.len() {
        for (a, v) in acc.iter_mut().zip(model.backbone.eval(batch.x.row_slice(i))) {
            *a += v;
        }
    }
    let scale = S::one() / S::lit(batch.len() as f64);
    acc.iter_mut().for_each(|v| *v *= scale);
    acc
}

/// Dynamic forest built from the batch-mean FC activation of `model`.
pub fn gfs_assignment<S: Scalar, R: Rng>(
    model: &Model<S>,
    batch: &Batch<S>,
    selection: Selection,
    rng: &mut R,
) -> Result<NodeAssignment, TrainError> {
    let fc = mean_activation(model, batch);
    Ok(gfs::dynamic_assignment(
        &fc,
        &model.forest.topology(),
        model.forest.trees,
        selection,
        rng,
    )?)
}

/// Exact hypergradient of the meta loss with respect to the flattened `phi`:
/// `-(alpha/(NT)) sum_i sum_t <meta_grad, grad R_t^i> dV_t(R_t^i)/dphi_t`.
pub fn meta_phi_gradient<S: Scalar>(
    net: &TwwNet<S>,
    stored: &TreeGradients<S>,
    meta_grad: &[S],
    alpha: S,
) -> Result<Vec<S>, TrainError> {
    if stored.is_empty() {
        return Err(TrainError::MissingGradients);
    }
    if meta_grad.len() != stored.param_len() {
        return Err(TrainError::Length {
            what: "meta gradient",
            expected: stored.param_len(),
            got: meta_grad.len(),
        });
    }
    if net.trees() != stored.trees {
        return Err(TrainError::Length {
            what: "weighting nets",
            expected: stored.trees,
            got: net.trees(),
        });
    }
    let n = stored.samples;
    let factor = -alpha / S::lit((n * stored.trees) as f64);
    let mut tape = Tape::new();
    let nets = net.bind(&mut tape);
    let mut total = None;
    for (t, vars) in nets.iter().enumerate() {
        let losses = tape.constant(Tensor::column((0..n).map(|i| stored.loss(i, t)).collect()));
        let coef = (0..n)
            .map(|i| factor * dot(meta_grad, stored.grad(i, t)))
            .collect();
        let coef = tape.constant(Tensor::column(coef));
        let w = weights_graph(&mut tape, vars, losses)?;
        let term = tape.mul(w, coef)?;
        let s = tape.sum(term)?;
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let grads = tape.backward(total.expect("at least one tree"))?;
    let flat: Vec<Var> = nets.iter().flat_map(|v| [v.w1, v.b1, v.w2, v.b2]).collect();
    let mut out = Vec::with_capacity(net.params().len());
    collect_gradients(&grads, &flat, &mut out);
    Ok(out)
}

/// `phi <- phi - beta * grad`.
pub fn meta_phi_update<S: Scalar>(net: &mut TwwNet<S>, grad: &[S], beta: S) {
    let mut phi = Vec::with_capacity(net.params().len());
    net.params().flatten_into(&mut phi);
    sgd_step(&mut phi, grad, beta);
    net.params_mut().assign_from(&phi);
}

/// Optimizer step on `theta` from the stored gradients reweighted by `weights`.
pub fn model_update<S: Scalar>(
    model: &mut Model<S>,
    adam: &mut Adam<S>,
    stored: &TreeGradients<S>,
    weights: &[S],
    lr: S,
) -> Result<Vec<S>, TrainError> {
    let grad = weighted_gradient(stored, weights)?;
    apply_gradient(model, adam, &grad, lr)?;
    Ok(grad)
}

pub fn apply_gradient<S: Scalar>(model: &mut Model<S>, adam: &mut Adam<S>, grad: &[S], lr: S) -> Result<(), TrainError> {
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite {
            iteration: None,
            what: "model gradient",
        });
    }
    let mut theta = model.theta();
    adam.step(&mut theta, grad, lr);
    model.set_theta(&theta);
    Ok(())
}

/// `G_ij = <(1/T) sum_t grad R_t^j(theta_hat), (1/T) sum_t grad R_t^i(theta)>`,
/// rows indexed by training sample, columns by meta sample.
pub fn g_similarity<S: Scalar>(train: &TreeGradients<S>, meta: &TreeGradients<S>) -> Vec<Vec<S>> {
    let train_means: Vec<Vec<S>> = (0..train.samples).map(|i| train.sample_mean(i)).collect();
    let meta_means: Vec<Vec<S>> = (0..meta.samples).map(|j| meta.sample_mean(j)).collect();
    train_means
        .iter()
        .map(|gi| meta_means.iter().map(|gj| dot(gi, gj)).collect())
        .collect()
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
