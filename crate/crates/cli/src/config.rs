use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use morf::data::{generate_synthetic, load_tabular, Dataset, SplitConfig, SyntheticSpec};
use morf::metatrain::{Hyperparams, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!("morf ", env!("CARGO_PKG_VERSION"));

/// Where the samples of a run come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic {
        preset: Option<String>,
        spec: SyntheticSpec,
    },
    File {
        path: PathBuf,
        classes: usize,
        sha256: String,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic { spec, .. } => Ok(generate_synthetic(spec)?.dataset),
            DataSource::File { path, classes, sha256 } => {
                let digest = file_sha256(path)?;
                if &digest != sha256 {
                    bail!("{} changed since the run was configured", path.display());
                }
                Ok(load_tabular(path, *classes).with_context(|| format!("loading {}", path.display()))?)
            }
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            DataSource::Synthetic { spec, .. } => spec.classes,
            DataSource::File { classes, .. } => *classes,
        }
    }
}

/// Everything that determines the outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub split: SplitConfig,
    pub variant: Variant,
    pub hyperparams: Hyperparams,
}

impl RunConfig {
    /// Hex sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// The `config.json` document of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigDocument {
    pub tool: String,
    pub command: String,
    pub config_hash: String,
    pub manifest: String,
    pub config: RunConfig,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Parses a class list such as `1,3`.
pub fn parse_classes(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let c: usize = part.parse().with_context(|| format!("bad class {part:?}"))?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    if out.is_empty() {
        bail!("empty class list {s:?}");
    }
    out.sort_unstable();
    Ok(out)
}

/// `Train(3)-Test(2)` style label.
pub fn protocol_label(split: &SplitConfig) -> String {
    format!("Train({})-Test({})", split.train_classes.len(), split.test_classes.len())
}

/// Directory-safe protocol name, e.g. `train1.2.3-test1.3`.
pub fn protocol_slug(split: &SplitConfig) -> String {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(".");
    format!("train{}-test{}", join(&split.train_classes), join(&split.test_classes))
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
