//! Command-line harness: data generation, training runs, ablation sweeps,
//! verification suites and significance comparisons.

pub mod ablate;
pub mod compare;
pub mod config;
pub mod run;

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use morf::data::{generate_synthetic, write_latent, write_tabular, Manifest, SplitConfig, SyntheticSpec};
use morf::gfs::Selection;
use morf::metatrain::{Hyperparams, Variant};
use morf::verify::{run_suite, Suite, SuiteReport};

use crate::ablate::{run_ablation, AblationPlan};
use crate::config::{file_sha256, parse_classes, write_atomic, write_json, DataSource, RunConfig};
use crate::run::execute_run;

#[derive(Parser, Debug)]
#[command(name = "morf", version, about = "Meta ordinal regression forests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic ordinal dataset.
    Generate(GenerateArgs),
    /// Train one variant.
    Train(TrainArgs),
    /// Run variants x seeds x split protocols and tabulate.
    Ablate(AblateArgs),
    /// Run a verification suite (or `all`).
    Verify(VerifyArgs),
    /// Pairwise Wilcoxon signed-rank tests between finished runs.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Sample count override.
    #[arg(long)]
    pub n: Option<usize>,
    /// Feature dimension override.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Comma-separated latent thresholds; sets the class count to len+1.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
}

impl SynthArgs {
    fn spec(&self, preset: &str, seed: u64) -> Result<SyntheticSpec> {
        let mut spec = SyntheticSpec::preset(preset, seed).with_context(|| format!("unknown preset {preset:?}"))?;
        if let Some(n) = self.n {
            spec.n = n;
        }
        if let Some(d) = self.dim {
            spec.dim = d;
        }
        if let Some(t) = &self.thresholds {
            spec.thresholds = t.clone();
            spec.classes = t.len() + 1;
        }
        if let Some(s) = self.noise {
            spec.noise = s;
        }
        if let Some(o) = self.offset {
            spec.offset = o;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    #[arg(long, default_value = "ord3-std")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing. Defaults to `data/<preset>-seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Synthetic preset generated in memory (used unless --data is given).
    #[arg(long, default_value = "ord3-std", conflicts_with = "data")]
    pub preset: String,
    /// Tabular dataset: feature columns then an integer label in 1..=C.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Class count; required with --data.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Seed of the synthetic data and of the train/test split.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[command(flatten)]
    pub synth: SynthArgs,
}

impl DataArgs {
    pub fn source(&self) -> Result<DataSource> {
        match &self.data {
            Some(path) => {
                let classes = self.classes.context("--classes is required with --data")?;
                Ok(DataSource::File {
                    path: path.clone(),
                    classes,
                    sha256: file_sha256(path)?,
                })
            }
            None => {
                let spec = self.synth.spec(&self.preset, self.data_seed)?;
                if let Some(c) = self.classes {
                    if c != spec.classes {
                        bail!("--classes {c} disagrees with the preset's {} classes", spec.classes);
                    }
                }
                Ok(DataSource::Synthetic {
                    preset: Some(self.preset.clone()),
                    spec,
                })
            }
        }
    }

    pub fn split(&self, classes: usize, train: Option<&str>, test: Option<&str>) -> Result<SplitConfig> {
        let mut s = SplitConfig::full(classes, self.train_fraction, self.data_seed);
        if let Some(t) = train {
            s.train_classes = parse_classes(t)?;
        }
        if let Some(t) = test {
            s.test_classes = parse_classes(t)?;
        }
        Ok(s)
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Model learning rate (also the pseudo-update step).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Tree-weight network learning rate.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Backbone hidden widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub fc_dim: Option<usize>,
    #[arg(long)]
    pub tww_hidden: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// 0-based epochs at which the learning rate decays, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Draw GFS coordinates with replacement.
    #[arg(long)]
    pub with_replacement: bool,
}

impl HyperArgs {
    pub fn resolve(&self, classes: usize) -> Hyperparams {
        let mut hp = Hyperparams {
            classes,
            ..Hyperparams::default()
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { hp.$field = v; })*
            };
        }
        set!(epochs => epochs, batch => batch_size, alpha => alpha, beta => beta, trees => trees,
             depth => depth, hidden => hidden, tww_hidden => tww_hidden, weight_decay => weight_decay,
             decay_epochs => decay_epochs, lr_decay => lr_decay);
        hp.fc_dim = self.fc_dim;
        if self.with_replacement {
            hp.selection = Selection::WithReplacement;
        }
        hp
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value = "morf")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory. Defaults to `runs/<variant>-seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Classes kept for training, e.g. `1,3`.
    #[arg(long)]
    pub train_classes: Option<String>,
    /// Classes kept for testing.
    #[arg(long)]
    pub test_classes: Option<String>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Variants to run; defaults to CORF, CORF+GFS, CORF+TWW and MORF.
    #[arg(long = "variant", value_delimiter = ',')]
    pub variants: Vec<Variant>,
    /// Training classes of one protocol; repeat once per protocol.
    #[arg(long)]
    pub train_classes: Vec<String>,
    /// Test classes of one protocol, paired in order with --train-classes.
    #[arg(long)]
    pub test_classes: Vec<String>,
    #[arg(long, default_value = "runs/ablate")]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// gradcheck, metagradcheck, forest-invariants, gfs-invariants, reduction or all.
    pub suite: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Case count; defaults per suite.
    #[arg(long)]
    pub cases: Option<usize>,
    /// Directory for failing cases. Defaults to `verify-failures`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CompareArgs {
    /// Finished run directories sharing a test set.
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,
    /// Also write compare.json and compare.md here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<PathBuf> {
    let spec = args.synth.spec(&args.preset, args.seed)?;
    let synth = generate_synthetic(&spec)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("data/{}-seed{}", args.preset, args.seed)));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = Manifest::for_synthetic(Some(&args.preset), &spec, &synth);
    let mut data = Vec::new();
    write_tabular(&synth.dataset, &mut data)?;
    write_atomic(&out.join(&manifest.data_file), &data)?;
    let mut latent = Vec::new();
    write_latent(&synth.dataset, &mut latent)?;
    write_atomic(&out.join(&manifest.latent_file), &latent)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(out)
}

pub fn train_config(args: &TrainArgs) -> Result<RunConfig> {
    let data = args.data.source()?;
    let classes = data.classes();
    let split = args
        .data
        .split(classes, args.train_classes.as_deref(), args.test_classes.as_deref())?;
    let hyperparams = Hyperparams {
        seed: args.seed,
        ..args.hyper.resolve(classes)
    };
    hyperparams.validate(args.variant)?;
    Ok(RunConfig {
        data,
        split,
        variant: args.variant,
        hyperparams,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<run::RunOutcome> {
    let cfg = train_config(args)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", args.variant.name(), args.seed)));
    execute_run(&out, &cfg, "train")
}

pub fn ablation_plan(args: &AblateArgs) -> Result<AblationPlan> {
    let data = args.data.source()?;
    let classes = data.classes();
    if args.train_classes.len() != args.test_classes.len() {
        bail!(
            "--train-classes given {} times but --test-classes {} times",
            args.train_classes.len(),
            args.test_classes.len()
        );
    }
    let protocols = if args.train_classes.is_empty() {
        vec![args.data.split(classes, None, None)?]
    } else {
        args.train_classes
            .iter()
            .zip(&args.test_classes)
            .map(|(tr, te)| args.data.split(classes, Some(tr), Some(te)))
            .collect::<Result<_>>()?
    };
    let variants = if args.variants.is_empty() {
        Variant::ABLATION.to_vec()
    } else {
        args.variants.clone()
    };
    Ok(AblationPlan {
        data,
        hyperparams: args.hyper.resolve(classes),
        variants,
        seeds: args.seeds.clone(),
        protocols,
        out: args.out.clone(),
    })
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<ablate::AblationReport> {
    let plan = ablation_plan(args)?;
    let run = || run_ablation(&plan).map(|(report, _)| report);
    match args.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(run),
        None => run(),
    }
}

pub fn parse_suites(name: &str) -> Result<Vec<Suite>> {
    if name == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    Ok(vec![name.parse::<Suite>().map_err(anyhow::Error::msg)?])
}

/// Runs the suites and writes failing cases to `<out>/<suite>.json`.
pub fn cmd_verify(args: &VerifyArgs) -> Result<Vec<SuiteReport>> {
    let mut reports = Vec::new();
    for suite in parse_suites(&args.suite)? {
        let report = run_suite(suite, args.seed, args.cases.unwrap_or(suite.default_cases()));
        if !report.ok() {
            let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("verify-failures"));
            fs::create_dir_all(&dir)?;
            write_json(&dir.join(format!("{}.json", suite.name())), &report)?;
        }
        reports.push(report);
    }
    Ok(reports)
}

pub fn verify_line(r: &SuiteReport) -> String {
    format!(
        "{} {}: {}/{} cases passed, worst error {:.3e}",
        if r.ok() { "PASS" } else { "FAIL" },
        r.suite,
        r.passed,
        r.cases,
        r.worst_error
    )
}

pub fn cmd_compare(args: &CompareArgs) -> Result<compare::CompareReport> {
    let report = compare::compare_runs(&args.runs)?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("compare.json"), &report)?;
        write_atomic(&out.join("compare.md"), compare::render_markdown(&report).as_bytes())?;
    }
    Ok(report)
}

/// Dispatches a parsed command line. Returns the process exit code.
pub fn run_cli(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate(a) => {
            let out = cmd_generate(&a)?;
            println!("wrote {}", out.display());
        }
        Command::Train(a) => {
            let o = cmd_train(&a)?;
            let m = &o.summary.final_metrics;
            let state = match (o.skipped, o.resumed_from) {
                (true, _) => " (already complete)".to_string(),
                (false, Some(e)) => format!(" (resumed at epoch {e})"),
                _ => String::new(),
            };
            println!(
                "{} seed {}: accuracy {:.4}, tree variance {:.4}, {} epochs -> {}{}",
                o.summary.variant,
                o.summary.seed,
                m.accuracy,
                m.tree_variance,
                o.summary.epochs,
                o.dir.display(),
                state
            );
        }
        Command::Ablate(a) => {
            let report = cmd_ablate(&a)?;
            print!("{}", ablate::render_markdown(&report));
        }
        Command::Verify(a) => {
            let reports = cmd_verify(&a)?;
            for r in &reports {
                println!("{}", verify_line(r));
            }
            if reports.iter().any(|r| !r.ok()) {
                return Ok(1);
            }
        }
        Command::Compare(a) => {
            let report = cmd_compare(&a)?;
            print!("{}", compare::render_markdown(&report));
        }
    }
    Ok(0)
}
