use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use morf::metrics::{wilcoxon_signed_rank, WilcoxonMethod};
use serde::{Deserialize, Serialize};

use crate::config::TOOL_VERSION;
use crate::run::{PREDICTIONS_FILE, SOFT_SCORE_NOTE};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct RunPredictions {
    pub name: String,
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub scores: Vec<f64>,
}

pub fn load_predictions(dir: &Path) -> Result<RunPredictions> {
    let path = dir.join(PREDICTIONS_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = RunPredictions {
        name: dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
        indices: Vec::new(),
        labels: Vec::new(),
        scores: Vec::new(),
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!("{}:{}: expected 5 fields", path.display(), i + 1);
        }
        let bad = || format!("{}:{}: malformed row", path.display(), i + 1);
        out.indices.push(f[0].parse().with_context(bad)?);
        out.labels.push(f[1].parse().with_context(bad)?);
        out.scores.push(f[3].parse().with_context(bad)?);
    }
    if out.indices.is_empty() {
        bail!("{} has no predictions", path.display());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: String,
    pub b: String,
    pub statistic: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub tool: String,
    pub scalar: String,
    pub significance_level: f64,
    pub samples: usize,
    pub pairs: Vec<PairResult>,
}

pub fn compare_runs(dirs: &[PathBuf]) -> Result<CompareReport> {
    if dirs.len() < 2 {
        bail!("compare needs at least two run directories");
    }
    let runs = dirs.iter().map(|d| load_predictions(d)).collect::<Result<Vec<_>>>()?;
    for r in &runs[1..] {
        if r.indices != runs[0].indices || r.labels != runs[0].labels {
            bail!("runs {} and {} were evaluated on different test sets", runs[0].name, r.name);
        }
    }
    let mut pairs = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let w = wilcoxon_signed_rank(&runs[i].scores, &runs[j].scores)?;
            pairs.push(PairResult {
                a: runs[i].name.clone(),
                b: runs[j].name.clone(),
                statistic: w.statistic,
                p_value: w.p_value,
                method: w.method,
                significant: w.p_value < SIGNIFICANCE_LEVEL,
            });
        }
    }
    Ok(CompareReport {
        tool: TOOL_VERSION.to_string(),
        scalar: SOFT_SCORE_NOTE.to_string(),
        significance_level: SIGNIFICANCE_LEVEL,
        samples: runs[0].indices.len(),
        pairs,
    })
}

pub fn render_markdown(report: &CompareReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "Wilcoxon signed-rank over {} paired test samples.", report.samples);
    let _ = writeln!(md, "Scalar: {}.\n", report.scalar);
    md.push_str("| A | B | W | p | method | p < 0.05 |\n|---|---|---|---|---|---|\n");
    for p in &report.pairs {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.6} | {:?} | {} |",
            p.a,
            p.b,
            p.statistic,
            p.p_value,
            p.method,
            if p.significant { "*" } else { "" }
        );
    }
    md
}
