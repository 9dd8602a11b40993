use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use morf::data::SplitConfig;
use morf::metatrain::{Hyperparams, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{protocol_label, protocol_slug, write_atomic, write_json, DataSource, RunConfig, TOOL_VERSION};
use crate::run::{execute_run, RunOutcome, Summary};

#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub data: DataSource,
    pub hyperparams: Hyperparams,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub protocols: Vec<SplitConfig>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub runs: usize,
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    pub tree_variance: MeanStd,
    pub per_class: Vec<ClassRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTable {
    pub protocol: String,
    pub train_classes: Vec<usize>,
    pub test_classes: Vec<usize>,
    pub rows: Vec<VariantRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub protocol: String,
    pub variant: String,
    pub seed: u64,
    pub dir: String,
    pub config_hash: String,
    pub accuracy: f64,
    pub tree_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub tool: String,
    pub seeds: Vec<u64>,
    pub tables: Vec<ProtocolTable>,
    pub runs: Vec<RunEntry>,
}

/// Scores of the classes present in the test set.
fn tested<'a>(s: &'a Summary, test_classes: &'a [usize]) -> impl Iterator<Item = &'a morf::metrics::ClassScores> {
    s.final_metrics.per_class.iter().filter(move |c| test_classes.contains(&c.class))
}

fn aggregate(variant: Variant, split: &SplitConfig, runs: &[&Summary]) -> VariantRow {
    let pick = |f: &dyn Fn(&Summary) -> f64| MeanStd::of(&runs.iter().map(|s| f(s)).collect::<Vec<_>>());
    let macro_of = |s: &Summary, g: fn(&morf::metrics::ClassScores) -> f64| {
        let v: Vec<f64> = tested(s, &split.test_classes).map(g).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let per_class = split
        .test_classes
        .iter()
        .map(|&class| {
            let get = |g: fn(&morf::metrics::ClassScores) -> f64| {
                pick(&|s: &Summary| s.final_metrics.per_class.iter().find(|c| c.class == class).map_or(0.0, g))
            };
            ClassRow {
                class,
                precision: get(|c| c.precision),
                recall: get(|c| c.recall),
                f1: get(|c| c.f1),
            }
        })
        .collect();
    VariantRow {
        variant: variant.tag().to_string(),
        runs: runs.len(),
        accuracy: pick(&|s| s.final_metrics.accuracy),
        macro_precision: pick(&|s| macro_of(s, |c| c.precision)),
        macro_recall: pick(&|s| macro_of(s, |c| c.recall)),
        macro_f1: pick(&|s| macro_of(s, |c| c.f1)),
        tree_variance: pick(&|s| s.final_metrics.tree_variance),
        per_class,
    }
}

fn cell(m: MeanStd) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.std)
}

pub fn render_markdown(report: &AblationReport) -> String {
    let mut md = String::from("# Ablation\n");
    let seeds: Vec<String> = report.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(md, "\nSeeds: {}. Entries are mean ± sample std over seeds.", seeds.join(", "));
    for t in &report.tables {
        let _ = writeln!(md, "\n## {}\n", t.protocol);
        let _ = writeln!(
            md,
            "Train classes {:?}, test classes {:?}. P, R and F1 are macro averages over test classes.\n",
            t.train_classes, t.test_classes
        );
        md.push_str("| Variant | Acc | P | R | F1 | Tree var |\n|---|---|---|---|---|---|\n");
        for r in &t.rows {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                r.variant,
                cell(r.accuracy),
                cell(r.macro_precision),
                cell(r.macro_recall),
                cell(r.macro_f1),
                cell(r.tree_variance)
            );
        }
        md.push_str("\n| Variant | Class | P | R | F1 |\n|---|---|---|---|---|\n");
        for r in &t.rows {
            for c in &r.per_class {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} |",
                    r.variant,
                    c.class,
                    cell(c.precision),
                    cell(c.recall),
                    cell(c.f1)
                );
            }
        }
    }
    md
}

pub fn run_dir(out: &Path, split: &SplitConfig, variant: Variant, seed: u64) -> PathBuf {
    out.join(protocol_slug(split)).join(format!("{}-seed{}", variant.name(), seed))
}

/// Runs every (protocol, variant, seed) in parallel, then writes
/// `ablation.json` and `ablation.md` into `plan.out`.
pub fn run_ablation(plan: &AblationPlan) -> Result<(AblationReport, Vec<RunOutcome>)> {
    if plan.variants.is_empty() || plan.seeds.is_empty() || plan.protocols.is_empty() {
        bail!("ablation needs at least one variant, seed and protocol");
    }
    let mut jobs = Vec::new();
    for split in &plan.protocols {
        for &variant in &plan.variants {
            for &seed in &plan.seeds {
                let cfg = RunConfig {
                    data: plan.data.clone(),
                    split: split.clone(),
                    variant,
                    hyperparams: Hyperparams {
                        seed,
                        ..plan.hyperparams.clone()
                    },
                };
                cfg.hyperparams.validate(variant)?;
                jobs.push((run_dir(&plan.out, split, variant, seed), cfg));
            }
        }
    }
    std::fs::create_dir_all(&plan.out)?;
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|(dir, cfg)| execute_run(dir, cfg, "ablate"))
        .collect::<Result<_>>()?;

    let mut tables = Vec::new();
    let mut runs = Vec::new();
    let mut k = 0;
    for split in &plan.protocols {
        let mut rows = Vec::new();
        for &variant in &plan.variants {
            let chunk = &outcomes[k..k + plan.seeds.len()];
            k += plan.seeds.len();
            let summaries: Vec<&Summary> = chunk.iter().map(|o| &o.summary).collect();
            rows.push(aggregate(variant, split, &summaries));
            for o in chunk {
                runs.push(RunEntry {
                    protocol: protocol_label(split),
                    variant: variant.tag().to_string(),
                    seed: o.summary.seed,
                    dir: o.dir.display().to_string(),
                    config_hash: o.summary.config_hash.clone(),
                    accuracy: o.summary.final_metrics.accuracy,
                    tree_variance: o.summary.final_metrics.tree_variance,
                });
            }
        }
        tables.push(ProtocolTable {
            protocol: protocol_label(split),
            train_classes: split.train_classes.clone(),
            test_classes: split.test_classes.clone(),
            rows,
        });
    }
    let report = AblationReport {
        tool: TOOL_VERSION.to_string(),
        seeds: plan.seeds.clone(),
        tables,
        runs,
    };
    write_json(&plan.out.join("ablation.json"), &report)?;
    write_atomic(&plan.out.join("ablation.md"), render_markdown(&report).as_bytes())?;
    Ok((report, outcomes))
}
