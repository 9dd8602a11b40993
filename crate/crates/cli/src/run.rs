use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use morf::data::{generate_synthetic, split, Dataset, Manifest, SplitIndices};
use morf::metatrain::{train, Checkpoint, EpochRecord, Evaluation, TrainError, Trainer};
use morf::metrics::MetricsReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{read_json, write_atomic, write_json, ConfigDocument, DataSource, RunConfig, TOOL_VERSION};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SOFT_SCORE_NOTE: &str =
    "soft rank score, the sum of forest output components (expected rank minus one for the softmax head)";

/// Identity of a test set, used to pair runs for significance tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSetId {
    pub samples: usize,
    pub indices_sha256: String,
}

impl TestSetId {
    pub fn of(indices: &[usize]) -> Self {
        let text = indices.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        Self {
            samples: indices.len(),
            indices_sha256: hex::encode(Sha256::digest(text.as_bytes())),
        }
    }
}

/// The `summary.json` document of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tool: String,
    pub config_hash: String,
    pub variant: String,
    pub seed: u64,
    pub protocol: String,
    pub epochs: usize,
    pub iterations: u64,
    pub train_samples: usize,
    pub test_set: TestSetId,
    pub significance_scalar: String,
    #[serde(rename = "final")]
    pub final_metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
    /// The directory already held a finished run with this config.
    pub skipped: bool,
    /// Epoch the run resumed from, if a checkpoint was found.
    pub resumed_from: Option<usize>,
}

/// Loads the dataset and writes the manifest the run refers to.
fn prepare_data(dir: &Path, cfg: &RunConfig) -> Result<(Dataset, String)> {
    match &cfg.data {
        DataSource::Synthetic { preset, spec } => {
            let synth = generate_synthetic(spec)?;
            let manifest = Manifest::for_synthetic(preset.as_deref(), spec, &synth);
            write_json(&dir.join(MANIFEST_FILE), &manifest)?;
            Ok((synth.dataset, MANIFEST_FILE.to_string()))
        }
        DataSource::File { path, .. } => {
            let data = cfg.data.load()?;
            let sidecar = path.parent().map(|p| p.join(MANIFEST_FILE));
            let reference = match sidecar {
                Some(m) if m.exists() => m,
                _ => path.clone(),
            };
            Ok((data, reference.display().to_string()))
        }
    }
}

/// Keeps the first `epochs` lines of the metrics file.
fn truncate_metrics(path: &Path, epochs: usize) -> Result<()> {
    if !path.exists() {
        File::create(path)?;
        return Ok(());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut kept = String::new();
    for line in reader.lines().take(epochs) {
        kept.push_str(&line?);
        kept.push('\n');
    }
    write_atomic(path, kept.as_bytes())
}

fn write_predictions(path: &Path, eval: &Evaluation) -> Result<()> {
    let mut out = String::from("index,label,predicted,soft_score,tree_variance\n");
    for r in &eval.rows {
        out.push_str(&format!(
            "{},{},{},{:?},{:?}\n",
            r.index, r.label, r.predicted, r.soft_score, r.tree_variance
        ));
    }
    write_atomic(path, out.as_bytes())
}

type Curve = (&'static str, fn(&EpochRecord) -> Option<f64>);

fn write_curves(dir: &Path, history: &[EpochRecord]) -> Result<()> {
    let dir = dir.join("curves");
    fs::create_dir_all(&dir)?;
    let curves: [Curve; 7] = [
        ("test_accuracy", |r| Some(r.test.accuracy)),
        ("tree_variance", |r| Some(r.test.tree_variance)),
        ("train_loss", |r| Some(r.train.train_loss)),
        ("lr", |r| Some(r.train.lr)),
        ("meta_loss", |r| r.train.meta_loss),
        ("mean_g", |r| r.train.mean_g),
        ("mean_weight", |r| r.train.mean_weight),
    ];
    for (name, get) in curves {
        let mut text = String::new();
        for r in history {
            if let Some(v) = get(r) {
                text.push_str(&format!("{} {:?}\n", r.epoch, v));
            }
        }
        if !text.is_empty() {
            write_atomic(&dir.join(format!("{name}.dat")), text.as_bytes())?;
        }
    }
    Ok(())
}

fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let rec = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

/// Trains one configuration into `dir`, resuming from a matching checkpoint
/// and skipping the work entirely if a matching summary exists.
pub fn execute_run(dir: &Path, cfg: &RunConfig, command: &str) -> Result<RunOutcome> {
    let hash = cfg.hash();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let summary_path = dir.join(SUMMARY_FILE);
    let config_path = dir.join(CONFIG_FILE);
    if summary_path.exists() {
        let summary: Summary = read_json(&summary_path)?;
        if summary.config_hash == hash {
            return Ok(RunOutcome {
                dir: dir.to_path_buf(),
                summary,
                skipped: true,
                resumed_from: None,
            });
        }
    }
    if config_path.exists() {
        let doc: ConfigDocument = read_json(&config_path)?;
        if doc.config_hash != hash {
            bail!(
                "{} holds a run with config {}; refusing to overwrite with {}",
                dir.display(),
                doc.config_hash,
                hash
            );
        }
    }

    let hp = &cfg.hyperparams;
    hp.validate(cfg.variant)?;
    if hp.classes != cfg.data.classes() {
        bail!("hyperparameters use {} classes but the data has {}", hp.classes, cfg.data.classes());
    }
    let (data, manifest) = prepare_data(dir, cfg)?;
    let indices: SplitIndices = split(&data, &cfg.split)?;

    write_json(
        &config_path,
        &ConfigDocument {
            tool: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config_hash: hash.clone(),
            manifest,
            config: cfg.clone(),
        },
    )?;

    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    let metrics_path = dir.join(METRICS_FILE);
    let mut resumed_from = None;
    let trainer = match checkpoint_path.exists() {
        true => {
            let cp: Checkpoint<f64> = read_json(&checkpoint_path)?;
            let trainer = Trainer::from_checkpoint(cp, &hash)?;
            resumed_from = Some(trainer.epoch);
            trainer
        }
        false => Trainer::new(hp.clone(), cfg.variant, data.dim)?,
    };
    truncate_metrics(&metrics_path, trainer.epoch)?;

    let mut metrics = OpenOptions::new().append(true).open(&metrics_path)?;
    let sink = |t: &Trainer<f64>, rec: &EpochRecord| -> Result<(), TrainError> {
        let line = serde_json::to_string(rec).map_err(|e| TrainError::Sink(e.to_string()))?;
        writeln!(metrics, "{line}")
            .and_then(|_| metrics.flush())
            .map_err(|e| TrainError::Sink(e.to_string()))?;
        let bytes = serde_json::to_vec(&t.checkpoint(&hash)).map_err(|e| TrainError::Sink(e.to_string()))?;
        write_atomic(&checkpoint_path, &bytes).map_err(|e| TrainError::Sink(e.to_string()))
    };
    let outcome = train(trainer, &data, &indices.train, &indices.test, sink)?;

    write_predictions(&dir.join(PREDICTIONS_FILE), &outcome.evaluation)?;
    write_curves(dir, &read_history(&metrics_path)?)?;

    let summary = Summary {
        tool: TOOL_VERSION.to_string(),
        config_hash: hash,
        variant: cfg.variant.tag().to_string(),
        seed: hp.seed,
        protocol: crate::config::protocol_label(&cfg.split),
        epochs: outcome.trainer.epoch,
        iterations: outcome.trainer.iteration,
        train_samples: indices.train.len(),
        test_set: TestSetId::of(&indices.test),
        significance_scalar: SOFT_SCORE_NOTE.to_string(),
        final_metrics: outcome.evaluation.report,
    };
    write_json(&summary_path, &summary)?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        summary,
        skipped: false,
        resumed_from,
    })
}
