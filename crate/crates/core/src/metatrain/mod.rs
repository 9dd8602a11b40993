//! Bilevel training loop and its ablation variants.
//!
//! One MORF iteration: per-sample per-tree gradients on the fixed forest,
//! a weighted pseudo-update of `theta`, the meta loss on a GFS forest at the
//! pseudo-updated parameters, an exact hypergradient step on `phi`, and an
//! optimizer step on `theta` with the refreshed weights.

mod checkpoint;
mod model;
mod steps;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{Batch, Head, Model, ModelVars, Prediction};
pub use steps::{
    apply_gradient, fixed_weight_loss, forest_pass, g_similarity, gfs_assignment, mean_activation, meta_phi_gradient, meta_phi_update,
    model_update, pseudo_update, softmax_loss, tree_gradients, tree_weights, weighted_gradient, weighted_train_loss,
    ForestPass, LossGrad, TreeGradients,
};

use crate::autodiff::AutodiffError;
use crate::data::Dataset;
use crate::forest::{self, decode_distribution, ForestConfig, ForestError, NodeAssignment};
use crate::gfs::{self, GfsError, Selection};
use crate::metrics::{confusion, prf1, MetricsError, MetricsReport};
use crate::optim::Adam;
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::twwnet::{TwwError, TwwNet, Weighting, DEFAULT_HIDDEN};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("no stored training gradients; run the pseudo-update first")]
    MissingGradients,
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {what}{}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFinite { iteration: Option<u64>, what: &'static str },
    #[error("metrics sink failed: {0}")]
    Sink(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Gfs(#[from] GfsError),
    #[error(transparent)]
    Tww(#[from] TwwError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Training variants of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Ce,
    Corf,
    CorfGfs,
    CorfTww,
    Morf,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Ce, Variant::Corf, Variant::CorfGfs, Variant::CorfTww, Variant::Morf];
    pub const ABLATION: [Variant; 4] = [Variant::Corf, Variant::CorfGfs, Variant::CorfTww, Variant::Morf];

    /// Display tag, e.g. `CORF+GFS`.
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Ce => "CE",
            Variant::Corf => "CORF",
            Variant::CorfGfs => "CORF+GFS",
            Variant::CorfTww => "CORF+TWW",
            Variant::Morf => "MORF",
        }
    }

    /// Command-line name, e.g. `corf-gfs`.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ce => "ce",
            Variant::Corf => "corf",
            Variant::CorfGfs => "corf-gfs",
            Variant::CorfTww => "corf-tww",
            Variant::Morf => "morf",
        }
    }

    pub fn plan(self) -> Plan {
        match self {
            Variant::Ce => Plan {
                head: Head::Softmax,
                meta: None,
                update: ForestChoice::Fixed,
                learned_weights: false,
            },
            Variant::Corf => Plan {
                head: Head::Forest,
                meta: None,
                update: ForestChoice::Fixed,
                learned_weights: false,
            },
            Variant::CorfGfs => Plan {
                head: Head::Forest,
                meta: None,
                update: ForestChoice::Dynamic,
                learned_weights: false,
            },
            Variant::CorfTww => Plan {
                head: Head::Forest,
                meta: Some(ForestChoice::Fixed),
                update: ForestChoice::Fixed,
                learned_weights: true,
            },
            Variant::Morf => Plan {
                head: Head::Forest,
                meta: Some(ForestChoice::Dynamic),
                update: ForestChoice::Fixed,
                learned_weights: true,
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace(['+', '_'], "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| format!("unknown variant {s:?} (expected ce, corf, corf-gfs, corf-tww or morf)"))
    }
}

/// Which node assignment a stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForestChoice {
    /// The forest drawn once per run.
    Fixed,
    /// A GFS forest drawn every iteration.
    Dynamic,
}

/// What a training iteration does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub head: Head,
    /// Meta forest; `None` skips the pseudo-update and meta step.
    pub meta: Option<ForestChoice>,
    /// Forest of the model update.
    pub update: ForestChoice,
    /// Learned tree weights, otherwise constant 1.
    pub learned_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay: f64,
    /// Epoch indices (0-based) at which `alpha` is multiplied by `lr_decay`.
    pub decay_epochs: Vec<usize>,
    pub weight_decay: f64,
    pub trees: usize,
    pub depth: usize,
    pub classes: usize,
    pub hidden: Vec<usize>,
    /// FC width; `None` means one coordinate per split node of the forest.
    pub fc_dim: Option<usize>,
    pub tww_hidden: usize,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 1e-4,
            batch_size: 16,
            epochs: 150,
            lr_decay: 0.1,
            decay_epochs: vec![120],
            weight_decay: 1e-4,
            trees: 4,
            depth: 3,
            classes: 3,
            hidden: vec![32],
            fc_dim: None,
            tww_hidden: DEFAULT_HIDDEN,
            selection: Selection::WithoutReplacement,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn forest(&self) -> Result<ForestConfig, TrainError> {
        let mut cfg = ForestConfig::with_split_fc(self.trees, self.depth, self.classes)?;
        if let Some(f) = self.fc_dim {
            cfg.fc_dim = f;
            cfg.validate()?;
        }
        Ok(cfg)
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.alpha * self.lr_decay.powi(decays as i32)
    }

    /// Rejects inconsistent settings for `variant`.
    pub fn validate(&self, variant: Variant) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr decay must be positive, got {}", self.lr_decay));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.hidden.contains(&0) {
            return bad("backbone widths must be positive".into());
        }
        if self.tww_hidden == 0 {
            return bad("weighting net width must be positive".into());
        }
        let forest = self.forest()?;
        let uses_gfs = {
            let plan = variant.plan();
            plan.update == ForestChoice::Dynamic || plan.meta == Some(ForestChoice::Dynamic)
        };
        if uses_gfs {
            let nodes = forest.topology().split_count();
            if forest.fc_dim % nodes != 0 {
                return bad(format!(
                    "FC width {} is not divisible by the {} split nodes per tree",
                    forest.fc_dim, nodes
                ));
            }
            let group = forest.fc_dim / nodes;
            if self.selection == Selection::WithoutReplacement && group < forest.trees {
                return bad(format!(
                    "group size {} is smaller than the {} trees; cannot select without replacement",
                    group, forest.trees
                ));
            }
        }
        Ok(())
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub loss: f64,
    pub meta_loss: Option<f64>,
    /// Mean of the gradient-similarity matrix.
    pub mean_g: Option<f64>,
    pub mean_weight: f64,
}

/// Model, weighting, optimizer and random streams of a run.
#[derive(Debug, Clone)]
pub struct Trainer<S: Scalar> {
    pub hp: Hyperparams,
    pub variant: Variant,
    pub plan: Plan,
    pub model: Model<S>,
    pub weighting: Weighting<S>,
    pub adam: Adam<S>,
    pub fixed: NodeAssignment,
    /// Evaluation forest of a model trained on GFS forests.
    pub inference: Option<NodeAssignment>,
    pub dynamic_rng: StreamRng,
    pub shuffle_rng: StreamRng,
    /// Completed iterations.
    pub iteration: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(hp: Hyperparams, variant: Variant, input_dim: usize) -> Result<Self, TrainError> {
        Self::with_plan(hp, variant, variant.plan(), input_dim)
    }

    /// Trainer following an explicit plan; `variant` only labels the run.
    pub fn with_plan(hp: Hyperparams, variant: Variant, plan: Plan, input_dim: usize) -> Result<Self, TrainError> {
        hp.validate(variant)?;
        if input_dim == 0 {
            return Err(TrainError::Config("input dimension must be positive".into()));
        }
        let forest = hp.forest()?;
        let mut init = stream_rng(hp.seed, Stream::Init);
        let model = Model::init(input_dim, &hp.hidden, forest, plan.head, &mut init);
        let weighting = if plan.learned_weights {
            Weighting::Learned(TwwNet::init(forest.trees, hp.tww_hidden, &mut init))
        } else {
            Weighting::freeze_constant(S::one())?
        };
        let mut fixed_rng = stream_rng(hp.seed, Stream::FixedAssignment);
        let fixed = gfs::fixed_random_assignment(forest.fc_dim, &forest.topology(), forest.trees, &mut fixed_rng)?;
        let adam = Adam::new(model.theta_len(), S::lit(hp.weight_decay));
        Ok(Self {
            dynamic_rng: stream_rng(hp.seed, Stream::DynamicAssignment),
            shuffle_rng: stream_rng(hp.seed, Stream::Shuffle),
            hp,
            variant,
            plan,
            model,
            weighting,
            adam,
            fixed,
            inference: None,
            iteration: 0,
            epoch: 0,
        })
    }

    /// One training iteration at learning rate `lr`.
    pub fn step(&mut self, batch: &Batch<S>, lr: S) -> Result<StepStats, TrainError> {
        let iteration = self.iteration;
        let out = match (self.plan.head, self.plan.meta) {
            (Head::Softmax, _) => self.softmax_step(batch, lr),
            (Head::Forest, None) => self.plain_step(batch, lr),
            (Head::Forest, Some(meta)) => self.meta_step(batch, lr, meta),
        };
        let stats = out.map_err(|e| match e {
            TrainError::NonFinite { what, .. } => TrainError::NonFinite {
                iteration: Some(iteration),
                what,
            },
            other => other,
        })?;
        self.iteration += 1;
        Ok(stats)
    }

    fn softmax_step(&mut self, batch: &Batch<S>, lr: S) -> Result<StepStats, TrainError> {
        let lg = softmax_loss(&self.model, batch)?;
        check_finite(lg.loss, "training loss")?;
        apply_gradient(&mut self.model, &mut self.adam, &lg.grad, lr)?;
        Ok(StepStats {
            loss: lg.loss.to_f64_lossy(),
            mean_weight: 1.0,
            ..StepStats::default()
        })
    }

    fn plain_step(&mut self, batch: &Batch<S>, lr: S) -> Result<StepStats, TrainError> {
        let assignment = match self.plan.update {
            ForestChoice::Fixed => self.fixed.clone(),
            ForestChoice::Dynamic => gfs_assignment(&self.model, batch, self.hp.selection, &mut self.dynamic_rng)?,
        };
        let lg = weighted_train_loss(&self.model, &self.weighting, batch, &assignment)?;
        check_finite(lg.loss, "training loss")?;
        apply_gradient(&mut self.model, &mut self.adam, &lg.grad, lr)?;
        let mean_weight = match &self.weighting {
            Weighting::Constant(c) => c.to_f64_lossy(),
            Weighting::Learned(_) => f64::NAN,
        };
        Ok(StepStats {
            loss: lg.mean_loss.to_f64_lossy(),
            mean_weight,
            ..StepStats::default()
        })
    }

    fn meta_step(&mut self, batch: &Batch<S>, lr: S, meta: ForestChoice) -> Result<StepStats, TrainError> {
        let alpha = lr;
        let stored = tree_gradients(&self.model, batch, &self.fixed)?;
        let weights = tree_weights(&self.weighting, &stored)?;
        let theta = self.model.theta();
        let theta_hat = pseudo_update(&theta, &stored, &weights, alpha)?;
        let model_hat = self.model.with_theta(&theta_hat);
        let meta_assignment = match meta {
            ForestChoice::Fixed => self.fixed.clone(),
            ForestChoice::Dynamic => gfs_assignment(&model_hat, batch, self.hp.selection, &mut self.dynamic_rng)?,
        };
        let unit = Weighting::Constant(S::one());
        let meta_lg = weighted_train_loss(&model_hat, &unit, batch, &meta_assignment)?;
        check_finite(meta_lg.loss, "meta loss")?;
        if meta_lg.grad.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite {
                iteration: None,
                what: "meta gradient",
            });
        }
        let unweighted = vec![S::one(); weights.len()];
        let mean_train = weighted_gradient(&stored, &unweighted)?;
        let mean_g = steps::dot(&meta_lg.grad, &mean_train);

        if let Some(net) = self.weighting.learned_mut() {
            let g_phi = meta_phi_gradient(net, &stored, &meta_lg.grad, alpha)?;
            if g_phi.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFinite {
                    iteration: None,
                    what: "hypergradient",
                });
            }
            meta_phi_update(net, &g_phi, S::lit(self.hp.beta));
        }
        let fresh = tree_weights(&self.weighting, &stored)?;
        model_update(&mut self.model, &mut self.adam, &stored, &fresh, lr)?;
        let mean_weight = fresh.iter().copied().sum::<S>() / S::lit(fresh.len() as f64);
        Ok(StepStats {
            loss: stored.mean_loss().to_f64_lossy(),
            meta_loss: Some(meta_lg.loss.to_f64_lossy()),
            mean_g: Some(mean_g.to_f64_lossy()),
            mean_weight: mean_weight.to_f64_lossy(),
        })
    }

    /// One pass over `indices` of `data` in a freshly shuffled order.
    pub fn run_epoch(&mut self, data: &Dataset, indices: &[usize]) -> Result<EpochStats, TrainError> {
        use rand::seq::SliceRandom;
        if indices.is_empty() {
            return Err(TrainError::Config("empty training set".into()));
        }
        let lr = self.hp.lr_at(self.epoch);
        let mut order = indices.to_vec();
        order.shuffle(&mut self.shuffle_rng);
        let mut acc = EpochAccumulator::default();
        for chunk in order.chunks(self.hp.batch_size) {
            let batch = Batch::from_indices(data, chunk)?;
            let stats = self.step(&batch, S::lit(lr))?;
            acc.push(&stats);
        }
        self.epoch += 1;
        if self.plan.head == Head::Forest && self.plan.update == ForestChoice::Dynamic {
            self.inference = Some(self.gfs_from_rows(data, indices)?);
        }
        Ok(acc.finish(lr))
    }

    /// GFS forest from the mean FC activation over `rows`, drawn from its own
    /// stream so repeated calls agree.
    pub fn gfs_from_rows(&self, data: &Dataset, rows: &[usize]) -> Result<NodeAssignment, TrainError> {
        let batch = Batch::from_indices(data, rows)?;
        let mut rng = stream_rng(self.hp.seed, Stream::Inference);
        gfs_assignment(&self.model, &batch, self.hp.selection, &mut rng)
    }

    /// Forest used at evaluation: the fixed one unless training used GFS forests.
    pub fn eval_assignment(&self) -> &NodeAssignment {
        self.inference.as_ref().unwrap_or(&self.fixed)
    }

    pub fn evaluate(&self, data: &Dataset, indices: &[usize]) -> Result<Evaluation, TrainError> {
        evaluate(&self.model, self.eval_assignment(), data, indices, self.variant, self.hp.seed)
    }
}

fn check_finite<S: Scalar>(v: S, what: &'static str) -> Result<(), TrainError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite { iteration: None, what })
    }
}

#[derive(Debug, Default)]
struct EpochAccumulator {
    iterations: usize,
    loss: f64,
    meta_loss: Option<f64>,
    mean_g: Option<f64>,
    weight: f64,
}

impl EpochAccumulator {
    fn push(&mut self, s: &StepStats) {
        self.iterations += 1;
        self.loss += s.loss;
        self.weight += s.mean_weight;
        if let Some(m) = s.meta_loss {
            *self.meta_loss.get_or_insert(0.0) += m;
        }
        if let Some(g) = s.mean_g {
            *self.mean_g.get_or_insert(0.0) += g;
        }
    }

    fn finish(self, lr: f64) -> EpochStats {
        let n = self.iterations as f64;
        let weight = self.weight / n;
        EpochStats {
            iterations: self.iterations,
            lr,
            train_loss: self.loss / n,
            meta_loss: self.meta_loss.map(|v| v / n),
            mean_g: self.mean_g.map(|v| v / n),
            mean_weight: weight.is_finite().then_some(weight),
        }
    }
}

/// Training-side aggregates of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub iterations: usize,
    pub lr: f64,
    /// Mean unweighted per-tree loss (cross-entropy for the softmax head).
    pub train_loss: f64,
    pub meta_loss: Option<f64>,
    pub mean_g: Option<f64>,
    pub mean_weight: Option<f64>,
}

/// One per-epoch metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    #[serde(flatten)]
    pub train: EpochStats,
    pub test: MetricsReport,
}

/// Per-sample test prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    /// Index into the full dataset.
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    /// Sum of the forest output components (expected rank minus one for the softmax head).
    pub soft_score: f64,
    pub tree_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub rows: Vec<PredictionRow>,
}

pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    assignment: &NodeAssignment,
    data: &Dataset,
    indices: &[usize],
    variant: Variant,
    seed: u64,
) -> Result<Evaluation, TrainError> {
    let c = model.forest.classes;
    let mut rows = Vec::with_capacity(indices.len());
    let mut dist_var = 0.0;
    for &i in indices {
        let sample = &data.samples[i];
        let x: Vec<S> = sample.features.iter().map(|&v| S::lit(v)).collect();
        let row = match model.head {
            Head::Forest => {
                let p = model.predict_one(&x, assignment)?;
                let predicted = p.output.decode();
                let ranks: Vec<usize> = p.trees.iter().map(|d| decode_distribution(d.as_slice())).collect();
                dist_var += forest::distribution_variance(&p.trees);
                PredictionRow {
                    index: i,
                    label: sample.label,
                    predicted,
                    soft_score: p.output.soft_score().to_f64_lossy(),
                    tree_variance: forest::tree_variance(&ranks, predicted),
                }
            }
            Head::Softmax => {
                let logits: Vec<f64> = model.backbone.eval(&x).iter().map(|v| v.to_f64_lossy()).collect();
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
                let total: f64 = e.iter().sum();
                let mut best = 0;
                for k in 1..c {
                    if logits[k] > logits[best] {
                        best = k;
                    }
                }
                PredictionRow {
                    index: i,
                    label: sample.label,
                    predicted: best + 1,
                    soft_score: e.iter().enumerate().map(|(k, v)| k as f64 * v / total).sum(),
                    tree_variance: 0.0,
                }
            }
        };
        rows.push(row);
    }
    let preds: Vec<usize> = rows.iter().map(|r| r.predicted).collect();
    let labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    let cm = confusion(&preds, &labels, c)?;
    let per_class = (1..=c).map(|k| prf1(&cm, k)).collect::<Result<Vec<_>, _>>()?;
    let n = rows.len().max(1) as f64;
    let report = MetricsReport {
        accuracy: cm.accuracy(),
        per_class,
        tree_variance: rows.iter().map(|r| r.tree_variance).sum::<f64>() / n,
        tree_variance_distribution: dist_var / n,
        samples: rows.len(),
        variant: variant.tag().to_string(),
        seed,
    };
    Ok(Evaluation { report, rows })
}

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    pub trainer: Trainer<S>,
    pub history: Vec<EpochRecord>,
    pub evaluation: Evaluation,
}

/// Trains from the trainer's current epoch up to `hp.epochs`, evaluating on
/// `test` after every epoch and handing the trainer and record to `sink`.
pub fn train<S: Scalar, F>(
    mut trainer: Trainer<S>,
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
    mut sink: F,
) -> Result<TrainOutcome<S>, TrainError>
where
    F: FnMut(&Trainer<S>, &EpochRecord) -> Result<(), TrainError>,
{
    if data.classes != trainer.hp.classes {
        return Err(TrainError::Config(format!(
            "dataset has {} classes, configuration has {}",
            data.classes, trainer.hp.classes
        )));
    }
    if data.dim != trainer.model.backbone.input_dim() {
        return Err(TrainError::Config(format!(
            "dataset dimension {} does not match the backbone input {}",
            data.dim,
            trainer.model.backbone.input_dim()
        )));
    }
    if test_idx.is_empty() {
        return Err(TrainError::Config("empty test set".into()));
    }
    let mut history = Vec::new();
    while trainer.epoch < trainer.hp.epochs {
        let stats = trainer.run_epoch(data, train_idx)?;
        let eval = trainer.evaluate(data, test_idx)?;
        let record = EpochRecord {
            epoch: trainer.epoch,
            train: stats,
            test: eval.report,
        };
        sink(&trainer, &record)?;
        history.push(record);
    }
    let evaluation = trainer.evaluate(data, test_idx)?;
    Ok(TrainOutcome {
        trainer,
        history,
        evaluation,
    })
}
