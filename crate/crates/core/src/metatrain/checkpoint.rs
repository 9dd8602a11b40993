use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Hyperparams, Model, Plan, TrainError, Trainer, Variant};
use crate::forest::NodeAssignment;
use crate::optim::Adam;
use crate::rng::{Stream, StreamState};
use crate::twwnet::Weighting;
use crate::Scalar;

pub const CHECKPOINT_FORMAT: &str = "morf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete resumable state of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<S> {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub variant: Variant,
    pub plan: Plan,
    pub hyperparams: Hyperparams,
    pub epoch: usize,
    pub iteration: u64,
    pub model: Model<S>,
    pub weighting: Weighting<S>,
    pub adam: Adam<S>,
    pub fixed_assignment: NodeAssignment,
    pub inference_assignment: Option<NodeAssignment>,
    pub dynamic_rng: StreamState,
    pub shuffle_rng: StreamState,
}

impl<S: Scalar + Serialize + DeserializeOwned> Trainer<S> {
    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint<S> {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            variant: self.variant,
            plan: self.plan,
            hyperparams: self.hp.clone(),
            epoch: self.epoch,
            iteration: self.iteration,
            model: self.model.clone(),
            weighting: self.weighting.clone(),
            adam: self.adam.clone(),
            fixed_assignment: self.fixed.clone(),
            inference_assignment: self.inference.clone(),
            dynamic_rng: StreamState::capture(self.hp.seed, Stream::DynamicAssignment, &self.dynamic_rng),
            shuffle_rng: StreamState::capture(self.hp.seed, Stream::Shuffle, &self.shuffle_rng),
        }
    }

    /// Restores a trainer, refusing checkpoints written for another config.
    pub fn from_checkpoint(cp: Checkpoint<S>, config_hash: &str) -> Result<Self, TrainError> {
        if cp.format != CHECKPOINT_FORMAT || cp.version != CHECKPOINT_VERSION {
            return Err(TrainError::Config(format!(
                "unsupported checkpoint {} v{}",
                cp.format, cp.version
            )));
        }
        if cp.config_hash != config_hash {
            return Err(TrainError::Config(format!(
                "checkpoint config hash {} does not match {}",
                cp.config_hash, config_hash
            )));
        }
        let restore = |s: &StreamState| {
            s.restore()
                .ok_or_else(|| TrainError::Config(format!("bad stream position {:?}", s.word_pos)))
        };
        Ok(Self {
            dynamic_rng: restore(&cp.dynamic_rng)?,
            shuffle_rng: restore(&cp.shuffle_rng)?,
            hp: cp.hyperparams,
            variant: cp.variant,
            plan: cp.plan,
            model: cp.model,
            weighting: cp.weighting,
            adam: cp.adam,
            fixed: cp.fixed_assignment,
            inference: cp.inference_assignment,
            iteration: cp.iteration,
            epoch: cp.epoch,
        })
    }
}
