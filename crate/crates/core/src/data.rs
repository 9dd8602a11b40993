//! Ordinal datasets: synthetic generation, tabular I/O and class-filtered splits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: expected {expected} columns, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {column}: `{value}` is not a number")]
    NonNumeric { row: usize, column: usize, value: String },
    #[error("row {row}: label `{label}` outside 1..={classes}")]
    LabelOutOfRange { row: usize, label: String, classes: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("thresholds must be strictly increasing with one per class boundary: {0}")]
    Thresholds(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    /// 1-based class index.
    pub label: usize,
    /// Latent score, when the sample is synthetic.
    pub latent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub dim: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize) -> Result<Self, DataError> {
        let dim = samples.first().ok_or(DataError::Empty)?.features.len();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(DataError::Ragged {
                    row: i + 1,
                    expected: dim,
                    found: s.features.len(),
                });
            }
            if s.label == 0 || s.label > classes {
                return Err(DataError::LabelOutOfRange {
                    row: i + 1,
                    label: s.label.to_string(),
                    classes,
                });
            }
        }
        Ok(Self { samples, dim, classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.label - 1] += 1;
        }
        counts
    }
}

/// Parameters of the synthetic latent-threshold generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub thresholds: Vec<f64>,
    pub offset: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Named presets. `ord3-std` is the standard three-class benchmark.
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "ord3-std" => Some(Self {
                n: 2000,
                dim: 16,
                classes: 3,
                thresholds: vec![2.5, 3.5],
                offset: 3.0,
                noise: 0.6,
                seed,
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.classes < 2 || self.thresholds.len() != self.classes - 1 {
            return Err(DataError::Thresholds(format!(
                "{} thresholds for {} classes",
                self.thresholds.len(),
                self.classes
            )));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) || self.thresholds.iter().any(|t| !t.is_finite()) {
            return Err(DataError::Thresholds(format!("{:?}", self.thresholds)));
        }
        if !(self.noise >= 0.0) {
            return Err(DataError::Invalid(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.n == 0 || self.dim == 0 {
            return Err(DataError::Invalid("need at least one sample and one feature".into()));
        }
        Ok(())
    }
}

/// Rank of a latent score: `1 +` the number of thresholds strictly below it.
pub fn label_for(latent: f64, thresholds: &[f64]) -> usize {
    1 + thresholds.iter().filter(|&&t| t < latent).count()
}

/// Generated dataset plus the projection direction that produced it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub direction: Vec<f64>,
}

/// `x ~ N(0, I)`, `z = <u, x> + offset + eps`, `eps ~ N(0, noise^2)`,
/// label from thresholds on `z`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic, DataError> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Data);
    let mut direction: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| DataError::Invalid(e.to_string()))?;

    let samples = (0..spec.n)
        .map(|_| {
            let features: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let z = features.iter().zip(&direction).map(|(x, u)| x * u).sum::<f64>() + spec.offset + eps;
            Sample {
                features,
                label: label_for(z, &spec.thresholds),
                latent: Some(z),
            }
        })
        .collect();
    Ok(Synthetic {
        dataset: Dataset::new(samples, spec.classes)?,
        direction,
    })
}

/// Side-car description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: Option<String>,
    pub samples: usize,
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub thresholds: Vec<f64>,
    pub offset: f64,
    pub noise: f64,
    pub direction: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub data_file: String,
    pub latent_file: String,
}

impl Manifest {
    pub fn for_synthetic(preset: Option<&str>, spec: &SyntheticSpec, synth: &Synthetic) -> Self {
        Self {
            preset: preset.map(str::to_owned),
            samples: spec.n,
            dim: spec.dim,
            classes: spec.classes,
            seed: spec.seed,
            thresholds: spec.thresholds.clone(),
            offset: spec.offset,
            noise: spec.noise,
            direction: synth.direction.clone(),
            class_counts: synth.dataset.class_counts(),
            data_file: "data.csv".into(),
            latent_file: "latent.csv".into(),
        }
    }
}

/// Writes features then label, with an `f0,..,label` header.
pub fn write_tabular<W: Write>(dataset: &Dataset, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..dataset.dim).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for s in &dataset.samples {
        let mut row: Vec<String> = s.features.iter().map(|v| format!("{v:?}")).collect();
        row.push(s.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_latent<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), DataError> {
    writeln!(out, "index,latent")?;
    for (i, s) in dataset.samples.iter().enumerate() {
        if let Some(z) = s.latent {
            writeln!(out, "{i},{z:?}")?;
        }
    }
    Ok(())
}

pub fn load_tabular(path: &Path, classes: usize) -> Result<Dataset, DataError> {
    parse_tabular(File::open(path)?, classes)
}

/// Comma-separated rows of real features followed by an integer label.
/// A first row containing any non-numeric field is treated as a header.
pub fn parse_tabular<R: Read>(input: R, classes: usize) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut samples = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DataError::Ragged {
                row,
                expected,
                found: record.len(),
            });
        }
        if expected < 2 {
            return Err(DataError::Invalid(format!(
                "row {row}: need at least one feature and a label"
            )));
        }
        let mut features = Vec::with_capacity(expected - 1);
        for (column, field) in record.iter().take(expected - 1).enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(v),
                _ => {
                    return Err(DataError::NonNumeric {
                        row,
                        column: column + 1,
                        value: field.to_owned(),
                    })
                }
            }
        }
        let raw = &record[expected - 1];
        let label = match raw.parse::<usize>() {
            Ok(l) if (1..=classes).contains(&l) => l,
            _ => {
                return Err(DataError::LabelOutOfRange {
                    row,
                    label: raw.to_owned(),
                    classes,
                })
            }
        };
        samples.push(Sample {
            features,
            label,
            latent: None,
        });
    }
    if samples.is_empty() {
        return Err(DataError::Empty);
    }
    Dataset::new(samples, classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_classes: Vec<usize>,
    pub test_classes: Vec<usize>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitConfig {
    /// All classes on both sides.
    pub fn full(classes: usize, train_fraction: f64, seed: u64) -> Self {
        Self {
            train_classes: (1..=classes).collect(),
            test_classes: (1..=classes).collect(),
            train_fraction,
            seed,
        }
    }
}

/// Row indices into the source dataset, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified seeded split by class, then filtered to the requested classes.
pub fn split(dataset: &Dataset, config: &SplitConfig) -> Result<SplitIndices, DataError> {
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "train fraction must lie strictly between 0 and 1 (got {}); 1.0 leaves no test data",
            config.train_fraction
        )));
    }
    let counts = dataset.class_counts();
    for (side, classes) in [("train", &config.train_classes), ("test", &config.test_classes)] {
        if classes.is_empty() {
            return Err(DataError::Split(format!("no {side} classes given")));
        }
        if let Some(&c) = classes.iter().find(|&&c| c == 0 || c > dataset.classes || counts[c - 1] == 0) {
            return Err(DataError::Split(format!("{side} class {c} not present in dataset")));
        }
    }

    let mut rng = stream_rng(config.seed, Stream::Split);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 1..=dataset.classes {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.samples[i].label == class).collect();
        members.shuffle(&mut rng);
        let n_train = (config.train_fraction * members.len() as f64).round() as usize;
        if config.train_classes.contains(&class) {
            train.extend_from_slice(&members[..n_train]);
        }
        if config.test_classes.contains(&class) {
            test.extend_from_slice(&members[n_train..]);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(DataError::Split(format!(
            "split leaves {} training and {} test samples",
            train.len(),
            test.len()
        )));
    }
    Ok(SplitIndices { train, test })
}
