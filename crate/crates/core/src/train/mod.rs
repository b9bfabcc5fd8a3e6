//! Multi-label training with Adam and emulated data-parallel workers.

mod adam;
mod dataset;
mod finetune;
mod parallel;
mod trainer;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use dataset::{flip_images, Dataset};
pub use finetune::{pretrain_then_finetune, FinetuneOutcome, Stage};
pub use parallel::{batch_gradients, parallel_gradients, BatchGradients};
pub use trainer::{predict, EpochLog, EpochMetrics, Trainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("gradient for {0} does not match its parameter")]
    GradientShape(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("model produced non-finite output")]
    NonFiniteOutput,
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("batch of {batch} cannot be split evenly across {workers} workers")]
    IndivisibleBatch { batch: usize, workers: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("no annotated frames to train on")]
    NoAnnotatedFrames,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Checkpoint(#[from] crate::model::checkpoint::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub num_workers: usize,
    pub flip_probability: f64,
    /// Per-AU multiplier on the positive BCE term; off when `None`.
    pub pos_weight: Option<Vec<f64>>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return err("epochs must be at least 1");
        }
        if self.num_workers == 0 {
            return err("num_workers must be at least 1");
        }
        if self.batch_size < self.num_workers {
            return err("batch_size must be at least num_workers");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return err("flip_probability must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return err("betas must lie in [0, 1) and eps must be positive");
        }
        if let Some(w) = &self.pos_weight {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return err("pos_weight entries must be positive");
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(serde_json::to_vec(self).expect("config serializes")).into()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            num_workers: 3,
            flip_probability: 0.5,
            pos_weight: None,
        }
    }
}
