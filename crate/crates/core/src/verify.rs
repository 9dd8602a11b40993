//! Property suites run by `morf verify` and the test targets.
//!
//! Every case draws its instance from its own seed, so a failing case can be
//! replayed on its own with the matching `*_case` function.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{compare_gradients, finite_difference_gradient};
use crate::data::{generate_synthetic, Dataset, Sample, SyntheticSpec};
use crate::forest::{
    decode_distribution, encode_label, leaf_distribution, route_probabilities, tree_output, ForestConfig,
    OrdinalDistribution, TreeTopology,
};
use crate::gfs::{self, Selection};
use crate::metatrain::{
    fixed_weight_loss, meta_phi_gradient, pseudo_update, tree_gradients, tree_weights, weighted_train_loss, Batch,
    ForestChoice, Head, Hyperparams, Model, Plan, Trainer, Variant,
};
use crate::twwnet::{TwwNet, Weighting};

pub const GRAD_RTOL: f64 = 1e-5;
pub const GRAD_ATOL: f64 = 1e-8;
pub const GRAD_STEP: f64 = 1e-5;
/// The meta loss moves with `phi` only through `alpha`-scaled terms, so a
/// smaller step is dominated by rounding; a much larger one crosses
/// rectifier kinks of the weighting nets.
pub const META_STEP: f64 = 1e-3;
pub const META_RTOL: f64 = 1e-4;
pub const META_ATOL: f64 = 1e-9;
pub const ROUTE_TOL: f64 = 1e-9;
pub const MONOTONE_TOL: f64 = 1e-12;
pub const REDUCTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Gradcheck,
    Metagradcheck,
    ForestInvariants,
    GfsInvariants,
    Reduction,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Gradcheck,
        Suite::Metagradcheck,
        Suite::ForestInvariants,
        Suite::GfsInvariants,
        Suite::Reduction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::Metagradcheck => "metagradcheck",
            Suite::ForestInvariants => "forest-invariants",
            Suite::GfsInvariants => "gfs-invariants",
            Suite::Reduction => "reduction",
        }
    }

    pub fn default_cases(self) -> usize {
        match self {
            Suite::Gradcheck => 100,
            Suite::Metagradcheck => 20,
            Suite::ForestInvariants => 10_000,
            Suite::GfsInvariants => 1_000,
            Suite::Reduction => 3,
        }
    }

    pub fn run_case(self, seed: u64) -> CaseOutcome {
        match self {
            Suite::Gradcheck => gradcheck_case(seed),
            Suite::Metagradcheck => metagradcheck_case(seed),
            Suite::ForestInvariants => forest_invariants_case(seed),
            Suite::GfsInvariants => gfs_invariants_case(seed),
            Suite::Reduction => reduction_case(seed, 10),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Suite::ALL.iter().map(|v| v.name()).collect();
            format!("unknown suite {s:?} (expected one of {})", names.join(", "))
        })
    }
}

/// Result of one case. `error` is the worst discrepancy the case measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub seed: u64,
    pub passed: bool,
    pub error: f64,
    pub detail: String,
}

impl CaseOutcome {
    fn pass(seed: u64, error: f64) -> Self {
        Self {
            seed,
            passed: true,
            error,
            detail: String::new(),
        }
    }

    fn fail(seed: u64, error: f64, detail: impl Into<String>) -> Self {
        Self {
            seed,
            passed: false,
            error,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: usize,
    pub passed: usize,
    pub worst_error: f64,
    pub failures: Vec<CaseOutcome>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Seed of case `i` of a run started from `seed`.
pub fn case_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

pub fn run_suite(suite: Suite, seed: u64, cases: usize) -> SuiteReport {
    let mut report = SuiteReport {
        suite,
        cases,
        passed: 0,
        worst_error: 0.0,
        failures: Vec::new(),
    };
    for i in 0..cases {
        let out = suite.run_case(case_seed(seed, i));
        report.worst_error = report.worst_error.max(out.error);
        if out.passed {
            report.passed += 1;
        } else {
            report.failures.push(out);
        }
    }
    report
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Dataset {
    let samples = (0..n)
        .map(|_| Sample {
            features: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            label: rng.gen_range(1..=classes),
            latent: None,
        })
        .collect();
    Dataset::new(samples, classes).expect("valid random dataset")
}

/// Weighted forest loss gradient over all of `theta` against central differences.
pub fn gradcheck_case(seed: u64) -> CaseOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(1..=4);
    let classes = rng.gen_range(2..=5);
    let trees = rng.gen_range(1..=3);
    let dim = rng.gen_range(2..=4);
    let hidden: Vec<usize> = if rng.gen_bool(0.5) {
        vec![rng.gen_range(2..=5)]
    } else {
        Vec::new()
    };
    let forest = ForestConfig {
        trees,
        depth,
        classes,
        fc_dim: rng.gen_range(1..=6),
    };
    let n = rng.gen_range(1..=3);
    let model = Model::<f64>::init(dim, &hidden, forest, Head::Forest, &mut rng);
    let data = random_dataset(&mut rng, n, dim, classes);
    let batch = Batch::from_indices(&data, &(0..n).collect::<Vec<_>>()).expect("batch");
    let assignment = gfs::fixed_random_assignment(forest.fc_dim, &forest.topology(), trees, &mut rng).expect("assignment");
    let weights: Vec<f64> = (0..n * trees).map(|_| rng.gen_range(0.1..1.0)).collect();

    let analytic = match fixed_weight_loss(&model, &weights, &batch, &assignment) {
        Ok(lg) => lg.grad,
        Err(e) => return CaseOutcome::fail(seed, f64::INFINITY, e.to_string()),
    };
    let numeric = finite_difference_gradient(
        |theta| {
            fixed_weight_loss(&model.with_theta(theta), &weights, &batch, &assignment)
                .map(|lg| lg.loss)
                .unwrap_or(f64::NAN)
        },
        &model.theta(),
        GRAD_STEP,
    );
    let numeric = match numeric {
        Ok(v) => v,
        Err(e) => return CaseOutcome::fail(seed, f64::INFINITY, e.to_string()),
    };
    let cmp = compare_gradients(&analytic, &numeric, GRAD_RTOL, GRAD_ATOL);
    if cmp.passed {
        CaseOutcome::pass(seed, cmp.max_rel_error)
    } else {
        CaseOutcome::fail(
            seed,
            cmp.max_rel_error,
            format!(
                "depth {depth}, classes {classes}, trees {trees}, coordinate {:?}: abs {:.3e}, rel {:.3e}",
                cmp.worst_index, cmp.max_abs_error, cmp.max_rel_error
            ),
        )
    }
}

/// A tiny bilevel instance: model, weighting nets, batch, forests and step size.
pub struct MetaInstance {
    pub model: Model<f64>,
    pub net: TwwNet<f64>,
    pub batch: Batch<f64>,
    pub fixed: crate::forest::NodeAssignment,
    pub meta: crate::forest::NodeAssignment,
    pub alpha: f64,
}

impl MetaInstance {
    /// Backbone 3 -> 4 -> 6, two depth-2 trees, two samples, 8 hidden units
    /// per weighting net (50 `phi` coordinates).
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.gen_range(2..=4);
        let forest = ForestConfig::with_split_fc(2, 2, classes).expect("forest");
        let model = Model::<f64>::init(3, &[4], forest, Head::Forest, &mut rng);
        let mut net = TwwNet::<f64>::init(2, 8, &mut rng);
        let phi: Vec<f64> = (0..net.params().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        net.params_mut().assign_from(&phi);
        let data = random_dataset(&mut rng, 2, 3, classes);
        let batch = Batch::from_indices(&data, &[0, 1]).expect("batch");
        let topology = forest.topology();
        let fixed = gfs::fixed_random_assignment(forest.fc_dim, &topology, 2, &mut rng).expect("assignment");
        let fc: Vec<f64> = (0..forest.fc_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let meta = gfs::dynamic_assignment(&fc, &topology, 2, Selection::WithoutReplacement, &mut rng).expect("gfs");
        let alpha = rng.gen_range(0.1..0.5);
        Self {
            model,
            net,
            batch,
            fixed,
            meta,
            alpha,
        }
    }

    /// Analytic hypergradient through the stored per-tree gradients.
    pub fn hypergradient(&self) -> Result<Vec<f64>, String> {
        let stored = tree_gradients(&self.model, &self.batch, &self.fixed).map_err(|e| e.to_string())?;
        let weighting = Weighting::Learned(self.net.clone());
        let weights = tree_weights(&weighting, &stored).map_err(|e| e.to_string())?;
        let theta_hat = pseudo_update(&self.model.theta(), &stored, &weights, self.alpha).map_err(|e| e.to_string())?;
        let unit = Weighting::Constant(1.0);
        let meta = weighted_train_loss(&self.model.with_theta(&theta_hat), &unit, &self.batch, &self.meta)
            .map_err(|e| e.to_string())?;
        meta_phi_gradient(&self.net, &stored, &meta.grad, self.alpha).map_err(|e| e.to_string())
    }

    /// Meta loss after a pseudo-update recomputed from scratch with the
    /// batched loss at weighting parameters `phi`.
    pub fn meta_loss(&self, phi: &[f64]) -> f64 {
        let mut net = self.net.clone();
        net.params_mut().assign_from(phi);
        let trees = self.model.forest.trees;
        let ones = vec![1.0; self.batch.len() * trees];
        let Ok(plain) = fixed_weight_loss(&self.model, &ones, &self.batch, &self.fixed) else {
            return f64::NAN;
        };
        let weights: Vec<f64> = plain
            .tree_losses
            .iter()
            .enumerate()
            .map(|(k, &r)| net.weight(k % trees, r).unwrap_or(f64::NAN))
            .collect();
        let Ok(step) = fixed_weight_loss(&self.model, &weights, &self.batch, &self.fixed) else {
            return f64::NAN;
        };
        let theta_hat: Vec<f64> = self
            .model
            .theta()
            .iter()
            .zip(&step.grad)
            .map(|(p, g)| p - self.alpha * g)
            .collect();
        fixed_weight_loss(&self.model.with_theta(&theta_hat), &ones, &self.batch, &self.meta)
            .map(|lg| lg.loss)
            .unwrap_or(f64::NAN)
    }

    pub fn phi(&self) -> Vec<f64> {
        let mut phi = Vec::new();
        self.net.params().flatten_into(&mut phi);
        phi
    }
}

pub fn metagradcheck_case(seed: u64) -> CaseOutcome {
    let inst = MetaInstance::random(seed);
    let analytic = match inst.hypergradient() {
        Ok(g) => g,
        Err(e) => return CaseOutcome::fail(seed, f64::INFINITY, e),
    };
    let numeric = match finite_difference_gradient(|phi| inst.meta_loss(phi), &inst.phi(), META_STEP) {
        Ok(g) => g,
        Err(e) => return CaseOutcome::fail(seed, f64::INFINITY, e.to_string()),
    };
    let cmp = compare_gradients(&analytic, &numeric, META_RTOL, META_ATOL);
    if cmp.passed {
        CaseOutcome::pass(seed, cmp.max_rel_error)
    } else {
        CaseOutcome::fail(
            seed,
            cmp.max_rel_error,
            format!(
                "coordinate {:?}: abs {:.3e}, rel {:.3e}",
                cmp.worst_index, cmp.max_abs_error, cmp.max_rel_error
            ),
        )
    }
}

/// Leaf probabilities by walking the bits of each leaf index from the root.
pub fn enumerate_paths(split: &[f64], depth: usize) -> Vec<f64> {
    (0..1usize << depth)
        .map(|leaf| {
            let mut node = 0;
            let mut p = 1.0;
            for level in (0..depth).rev() {
                if (leaf >> level) & 1 == 0 {
                    p *= split[node];
                    node = 2 * node + 1;
                } else {
                    p *= 1.0 - split[node];
                    node = 2 * node + 2;
                }
            }
            p
        })
        .collect()
}

fn monotone(d: &[f64]) -> bool {
    d.windows(2).all(|w| w[0] >= w[1] - MONOTONE_TOL)
}

/// Routing normalization, leaf and tree monotonicity, path-enumeration
/// equivalence and the label round trip on one random draw.
pub fn forest_invariants_case(seed: u64) -> CaseOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(1..=5);
    let topology = TreeTopology::new(depth).expect("depth");
    let split: Vec<f64> = (0..topology.split_count())
        .map(|_| rng.gen_range(1e-6..1.0 - 1e-6))
        .collect();
    let routing = match route_probabilities(&split, &topology) {
        Ok(r) => r,
        Err(e) => return CaseOutcome::fail(seed, f64::INFINITY, e.to_string()),
    };
    let total: f64 = routing.iter().sum();
    let mut worst = (total - 1.0).abs();
    if worst > ROUTE_TOL {
        return CaseOutcome::fail(seed, worst, format!("depth {depth}: routing sums to {total}"));
    }

    let classes = rng.gen_range(2..=8);
    let leaves: Vec<OrdinalDistribution<f64>> = (0..topology.leaf_count())
        .map(|_| {
            let raw: Vec<f64> = (0..classes - 1).map(|_| rng.gen_range(-6.0..6.0)).collect();
            leaf_distribution(&raw)
        })
        .collect();
    if let Some(bad) = leaves.iter().find(|l| !monotone(l.as_slice())) {
        return CaseOutcome::fail(seed, worst, format!("leaf not monotone: {:?}", bad.0));
    }
    let g = match tree_output(&routing, &leaves) {
        Ok(g) => g,
        Err(e) => return CaseOutcome::fail(seed, f64::INFINITY, e.to_string()),
    };
    if !monotone(g.as_slice()) || g.0.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return CaseOutcome::fail(seed, worst, format!("tree output not monotone: {:?}", g.0));
    }

    if depth <= 4 {
        let paths = enumerate_paths(&split, depth);
        for c in 0..classes - 1 {
            let brute: f64 = paths.iter().zip(&leaves).map(|(p, l)| p * l.0[c]).sum();
            let err = (brute - g.0[c]).abs();
            worst = worst.max(err);
            if err > 1e-12 {
                return CaseOutcome::fail(seed, err, format!("path enumeration differs at component {c}"));
            }
        }
    }

    let y = rng.gen_range(1..=classes);
    match encode_label::<f64>(y, classes) {
        Ok(d) if decode_distribution(d.as_slice()) == y => CaseOutcome::pass(seed, worst),
        Ok(d) => CaseOutcome::fail(seed, worst, format!("label {y} of {classes} decodes to {}", d.decode())),
        Err(e) => CaseOutcome::fail(seed, worst, e.to_string()),
    }
}

/// Full coverage, one coordinate per group per tree, and rank consistency of
/// the groups for the default forest (4 trees, depth 3, 28 FC coordinates).
pub fn gfs_invariants_case(seed: u64) -> CaseOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (trees, depth) = (4, 3);
    let topology = TreeTopology::new(depth).expect("depth");
    let f = trees * topology.split_count();
    // Coarse values so ties occur.
    let fc: Vec<f64> = (0..f).map(|_| (rng.gen_range(-8..8) as f64) / 4.0).collect();
    let ranking = match gfs::rank_features(&fc) {
        Ok(r) => r,
        Err(e) => return CaseOutcome::fail(seed, 1.0, e.to_string()),
    };
    let partition = gfs::partition_groups(&ranking, topology.split_count()).expect("divisible");
    for k in 1..partition.len() {
        let lo = partition.groups()[k - 1].iter().map(|&i| fc[i]).fold(f64::INFINITY, f64::min);
        let hi = partition.groups()[k].iter().map(|&i| fc[i]).fold(f64::NEG_INFINITY, f64::max);
        if lo < hi {
            return CaseOutcome::fail(seed, 1.0, format!("group {k} outranks group {}", k - 1));
        }
    }
    let assignment = match gfs::select_dynamic(&partition, trees, Selection::WithoutReplacement, &mut rng) {
        Ok(a) => a,
        Err(e) => return CaseOutcome::fail(seed, 1.0, e.to_string()),
    };
    let mut used = vec![0usize; f];
    for t in 0..trees {
        for (k, &coord) in assignment.tree(t).iter().enumerate() {
            if !partition.groups()[k].contains(&coord) {
                return CaseOutcome::fail(seed, 1.0, format!("tree {t} node {k} takes {coord} outside its group"));
            }
            used[coord] += 1;
        }
    }
    if let Some(c) = used.iter().position(|&u| u != 1) {
        return CaseOutcome::fail(seed, 1.0, format!("coordinate {c} used {} times", used[c]));
    }
    CaseOutcome::pass(seed, 0.0)
}

/// Plan that runs the full pseudo-update and model update through the
/// per-sample gradient store but with unit weights and the fixed forest.
pub fn unit_weight_meta_plan() -> Plan {
    Plan {
        head: Head::Forest,
        meta: Some(ForestChoice::Fixed),
        update: ForestChoice::Fixed,
        learned_weights: false,
    }
}

/// Small ord3-std draw for trainer-level checks.
pub fn reduction_data(seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        n: 256,
        ..SyntheticSpec::preset("ord3-std", seed).expect("preset")
    };
    generate_synthetic(&spec).expect("synthetic").dataset
}

/// Unit-weight meta trainer against the batched constant-weight trainer, both
/// from the same seed, compared parameter by parameter after every iteration.
pub fn reduction_case(seed: u64, iterations: usize) -> CaseOutcome {
    let data = reduction_data(seed);
    let hp = Hyperparams {
        seed,
        ..Hyperparams::default()
    };
    let build = |plan: Plan| Trainer::<f64>::with_plan(hp.clone(), Variant::Morf, plan, data.dim);
    let (mut meta, mut plain) = match (build(unit_weight_meta_plan()), build(Variant::Corf.plan())) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return CaseOutcome::fail(seed, f64::INFINITY, e.to_string()),
    };
    let mut worst: f64 = 0.0;
    for it in 0..iterations {
        let rows: Vec<usize> = (it * hp.batch_size..(it + 1) * hp.batch_size).map(|i| i % data.len()).collect();
        let batch = Batch::from_indices(&data, &rows).expect("batch");
        if let Err(e) = meta.step(&batch, hp.alpha).and(plain.step(&batch, hp.alpha)) {
            return CaseOutcome::fail(seed, f64::INFINITY, e.to_string());
        }
        let diff = meta
            .model
            .theta()
            .iter()
            .zip(plain.model.theta())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
        if diff > REDUCTION_TOL {
            return CaseOutcome::fail(seed, diff, format!("iteration {}: max parameter gap {diff:.3e}", it + 1));
        }
    }
    CaseOutcome::pass(seed, worst)
}
