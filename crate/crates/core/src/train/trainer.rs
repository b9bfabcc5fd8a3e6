use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::dataset::Dataset;
use super::parallel::parallel_gradients;
use super::{Result, TrainConfig, TrainError};
use crate::eval::{count_predictions, merge_all, ConfusionCounter, EvalReport, DEFAULT_THRESHOLD};
use crate::model::checkpoint::Checkpoint;
use crate::model::{Model, ModelConfig, ParameterSet};
use crate::tensor::Tensor;

/// Frames scored per inference pass in [`Trainer::predict`].
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    /// Mean training loss over the frames used this epoch.
    pub loss: f64,
    /// Counters from the training forward passes (pre-update, augmented).
    pub counters: Vec<ConfusionCounter>,
    pub steps: usize,
    pub wall_seconds: f64,
}

/// One JSON-lines record of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub loss: f64,
    pub train: EvalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<EvalReport>,
    pub wall_seconds: f64,
}

/// Model, parameters and optimizer state advanced one epoch at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    params: ParameterSet,
    adam: AdamState,
    cfg: TrainConfig,
    epochs_completed: u64,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, params: ParameterSet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(model_cfg)?;
        params.validate(model.config())?;
        if let Some(w) = &cfg.pos_weight {
            if w.len() != model.config().num_aus {
                return Err(TrainError::Config(format!(
                    "pos_weight has {} entries for {} AUs",
                    w.len(),
                    model.config().num_aus
                )));
            }
        }
        let adam = AdamState::zeros_like(&params);
        Ok(Self {
            model,
            params,
            adam,
            cfg,
            epochs_completed: 0,
        })
    }

    /// Continues from a training checkpoint written under the same config.
    pub fn resume(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        ck.check_train_digest(&cfg.digest())?;
        let mut t = Self::new(ck.config, ck.params, cfg)?;
        if let Some(adam) = ck.optimizer {
            t.adam = adam;
        }
        t.epochs_completed = ck.epochs_completed;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config().clone(),
            params: self.params.clone(),
            optimizer: Some(self.adam.clone()),
            train_digest: self.cfg.digest(),
            epochs_completed: self.epochs_completed,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    pub fn epochs_completed(&self) -> u64 {
        self.epochs_completed
    }

    /// Visiting order and flip decisions for `epoch`, a pure function of the
    /// seed, the epoch number and the annotated rows.
    pub fn epoch_plan(&self, data: &Dataset, epoch: u64) -> (Vec<usize>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch);
        let mut order = data.annotated_indices();
        order.shuffle(&mut rng);
        let flips = order
            .iter()
            .map(|_| rng.random::<f64>() < self.cfg.flip_probability)
            .collect();
        (order, flips)
    }

    /// One pass over the annotated frames. Unannotated rows never enter a
    /// batch; each batch is cut down to a multiple of the worker count.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochMetrics> {
        self.check_data(data)?;
        let start = Instant::now();
        let epoch = self.epochs_completed + 1;
        let (order, flips) = self.epoch_plan(data, epoch);
        if order.is_empty() {
            return Err(TrainError::NoAnnotatedFrames);
        }
        let workers = self.cfg.num_workers;
        let mut loss_sum = 0.0;
        let mut seen = 0;
        let mut steps = 0;
        let mut shards = Vec::new();
        for (idx, fl) in order.chunks(self.cfg.batch_size).zip(flips.chunks(self.cfg.batch_size)) {
            let usable = idx.len() / workers * workers;
            if usable == 0 {
                continue;
            }
            let (images, labels) = data.select(&idx[..usable], Some(&fl[..usable]))?;
            let out = parallel_gradients(
                &self.model,
                &self.params,
                &images,
                &labels,
                workers,
                self.cfg.pos_weight.as_deref(),
            )?;
            adam_step(&mut self.params, &out.grads, &mut self.adam, &self.cfg)?;
            loss_sum += out.loss * usable as f64;
            seen += usable;
            steps += 1;
            let probs: Vec<f64> = out.logits.sigmoid().data().to_vec();
            shards.push(count_predictions(
                data.au_ids(),
                &probs,
                labels.data(),
                None,
                DEFAULT_THRESHOLD,
            )?);
        }
        if steps == 0 {
            return Err(TrainError::IndivisibleBatch {
                batch: order.len(),
                workers,
            });
        }
        self.epochs_completed = epoch;
        Ok(EpochMetrics {
            epoch,
            loss: loss_sum / seen as f64,
            counters: merge_all(&shards)?,
            steps,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs the remaining configured epochs, evaluating `test` after each and
    /// appending one JSON line per epoch to `log`.
    pub fn fit(
        &mut self,
        train: &Dataset,
        test: Option<&Dataset>,
        mut log: Option<&mut dyn Write>,
    ) -> Result<Vec<EpochLog>> {
        let mut out = Vec::new();
        while (self.epochs_completed as usize) < self.cfg.epochs {
            let m = self.train_epoch(train)?;
            let test_report = test.map(|d| self.evaluate(d)).transpose()?;
            let record = EpochLog {
                epoch: m.epoch,
                loss: m.loss,
                train: EvalReport::from_counters(&m.counters, DEFAULT_THRESHOLD)?,
                test: test_report,
                wall_seconds: m.wall_seconds,
            };
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &record).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            out.push(record);
        }
        Ok(out)
    }

    /// Sigmoid probabilities `[N, A]` for every frame of `data`.
    pub fn predict(&self, data: &Dataset) -> Result<Tensor> {
        predict(&self.model, &self.params, data.images())
    }

    /// Metrics over the annotated frames of `data`, unaugmented.
    pub fn evaluate(&self, data: &Dataset) -> Result<EvalReport> {
        self.check_data(data)?;
        let probs = self.predict(data)?;
        let counters = count_predictions(
            data.au_ids(),
            probs.data(),
            data.labels().data(),
            Some(data.mask()),
            DEFAULT_THRESHOLD,
        )?;
        Ok(EvalReport::from_counters(&counters, DEFAULT_THRESHOLD)?)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.au_ids().len() != self.model.config().num_aus {
            return Err(TrainError::Dataset(format!(
                "{} label columns for a {}-AU head",
                data.au_ids().len(),
                self.model.config().num_aus
            )));
        }
        Ok(())
    }
}

/// Sigmoid probabilities for `[N, C, H, W]` images, scored in fixed-size chunks.
pub fn predict(model: &Model, params: &ParameterSet, images: &Tensor) -> Result<Tensor> {
    let n = images.shape()[0];
    let per = images.len() / n.max(1);
    let a = model.config().num_aus;
    let mut out = Vec::with_capacity(n * a);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let count = EVAL_CHUNK.min(n - start);
        let mut shape = images.shape().to_vec();
        shape[0] = count;
        let chunk = Tensor::new(shape, images.data()[start * per..(start + count) * per].to_vec())?;
        let logits = model.logits(params, &chunk)?;
        if !logits.all_finite() {
            return Err(TrainError::NonFiniteOutput);
        }
        out.extend_from_slice(logits.sigmoid().data());
    }
    Ok(Tensor::new(vec![n, a], out)?)
}
