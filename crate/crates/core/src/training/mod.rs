//! End-to-end training of both stages.

mod loss;
mod optim;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpred_numeric::{Graph, NumericError, ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

pub use loss::{
    classification_loss, classification_loss_graph, laplace_nll, laplace_nll_graph, total_loss, wta_mode,
    LossBreakdown, LossWeights, PROB_FLOOR,
};
pub use optim::{clip_grad_norm, cosine_lr, AdamWParams, OptimizerState};

use crate::checkpoint::ModelCheckpoint;
use crate::config::RunConfig;
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Model, RefineTargets};
use crate::scenario::Scenario;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenarios per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine horizon in epochs; `None` uses `epochs`.
    pub schedule_horizon: Option<usize>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss_weights: LossWeights,
    /// Global gradient-norm cap; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 64,
            batch_size: 32,
            lr: 5e-4,
            schedule_horizon: None,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss_weights: LossWeights::default(),
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("need lr >= 0, weight_decay >= 0, eps > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.schedule_horizon.unwrap_or(self.epochs)
    }

    fn adamw(&self) -> AdamWParams {
        AdamWParams { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed derived from a sequence of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Parameters, optimizer state and epoch counter of a run in progress.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    config: RunConfig,
    pub params: ParameterStore,
    pub optimizer: OptimizerState,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(&config.model)?;
        let params = model.init(derive_seed(&[config.seed, 0]))?;
        let optimizer = OptimizerState::new(&params);
        Ok(Self { model, config: config.clone(), params, optimizer, epoch: 0 })
    }

    /// Continues from a checkpoint, keeping its parameters, moments and
    /// epoch count; `config` supplies the training schedule.
    pub fn resume(config: &RunConfig, ckpt: ModelCheckpoint) -> Result<Self> {
        config.validate()?;
        if config.model != ckpt.config.model {
            return Err(Error::Config("model section differs from the checkpoint's".into()));
        }
        let model = Model::new(&config.model)?;
        let optimizer = ckpt.optimizer.unwrap_or_else(|| OptimizerState::new(&ckpt.params));
        Ok(Self { model, config: config.clone(), params: ckpt.params, optimizer, epoch: ckpt.epoch })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// One optimizer step on the mean loss of `batch`.
    pub fn step(&mut self, batch: &[&Scenario], lr: f64) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let step = self.optimizer.step as usize + 1;
        let weights = self.config.training.loss_weights;
        let w = 1.0 / batch.len() as f64;
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut mean = LossBreakdown::empty(weights);
        let numeric = |e: Error| match e {
            Error::Numeric(NumericError::NonFinite { op }) => {
                Error::NonFiniteLoss { step, detail: format!("non-finite value produced by `{op}`") }
            }
            other => other,
        };
        for (i, scenario) in batch.iter().enumerate() {
            let seed = derive_seed(&[self.config.seed, self.epoch as u64, step as u64, i as u64]);
            let mut g = Graph::new(true, seed);
            let out = self.model.forward(&mut g, &self.params, scenario, RefineTargets::All).map_err(numeric)?;
            let (loss, parts) = total_loss(&mut g, &out, weights).map_err(numeric)?;
            if !parts.total.is_finite() {
                return Err(Error::NonFiniteLoss { step, detail: format!("scenario {}: {parts:?}", scenario.id) });
            }
            mean.accumulate(&parts, w);
            let scaled = g.scale(loss, w)?;
            g.backward(scaled)?;
            for (name, grad) in g.param_grads() {
                match grads.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(grad.data()).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(name, grad);
                    }
                }
            }
        }
        if let Some(max) = self.config.training.grad_clip {
            clip_grad_norm(&mut grads, max);
        }
        if grads.values().any(|t| !t.is_finite()) {
            return Err(Error::NonFiniteLoss { step, detail: "non-finite gradient".into() });
        }
        self.optimizer.apply(&mut self.params, &grads, lr, &self.config.training.adamw())?;
        Ok(mean)
    }

    /// One pass over `train` in a seeded shuffled order. Returns the
    /// learning rate used and the mean total loss.
    pub fn run_epoch(&mut self, train: &[Scenario]) -> Result<(f64, f64)> {
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let tc = &self.config.training;
        let lr = cosine_lr(tc.lr, self.epoch, tc.horizon());
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[self.config.seed, self.epoch as u64, 1])));
        let bs = tc.batch_size;
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let batch: Vec<&Scenario> = chunk.iter().map(|&i| &train[i]).collect();
            let parts = self.step(&batch, lr)?;
            total += parts.total * chunk.len() as f64;
        }
        self.epoch += 1;
        Ok((lr, total / train.len() as f64))
    }

    pub fn evaluate(&self, split: &[Scenario]) -> Result<EvalReport> {
        evaluate(&self.model, &self.params, split, &self.config.metrics)
    }

    pub fn checkpoint(&self, report: Option<&EvalReport>) -> ModelCheckpoint {
        ModelCheckpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            metrics: report.map(EvalReport::to_map).unwrap_or_default(),
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub train_total: f64,
    pub val: Option<EvalReport>,
}

pub const METRICS_CSV_HEADER: &str = "epoch,lr,train_total,val_minade6,val_minfde6,val_mr6";

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        let k = self.val.as_ref().and_then(|r| r.get(6).or_else(|| r.metrics.last()));
        let f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.train_total,
            f(k.map(|m| m.min_ade)),
            f(k.map(|m| m.min_fde)),
            f(k.map(|m| m.miss_rate))
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: ModelCheckpoint,
    pub last: ModelCheckpoint,
    pub records: Vec<EpochRecord>,
}

/// Validation score used to pick the best checkpoint (lower is better).
fn selection_score(report: &EvalReport) -> f64 {
    report.get(6).or_else(|| report.metrics.last()).map_or(f64::INFINITY, |m| m.min_fde)
}

/// Trains until `trainer.epoch` reaches the configured epoch count,
/// evaluating on `val` after every epoch and appending one line per epoch
/// to `log` when given.
pub fn train(mut trainer: Trainer, train: &[Scenario], val: &[Scenario], log: Option<&Path>) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut log_file = match log {
        Some(path) => {
            let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                writeln!(f, "{METRICS_CSV_HEADER}")?;
            }
            Some(f)
        }
        None => None,
    };
    let validate = |t: &Trainer| -> Result<Option<EvalReport>> {
        if val.is_empty() {
            Ok(None)
        } else {
            t.evaluate(val).map(Some)
        }
    };

    let mut best: Option<(f64, ModelCheckpoint)> = None;
    let mut records = Vec::new();
    let mut last_report = None;
    while trainer.epoch < trainer.config.training.epochs {
        let (lr, train_total) = trainer.run_epoch(train)?;
        let report = validate(&trainer)?;
        let record = EpochRecord { epoch: trainer.epoch, lr, train_total, val: report.clone() };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", record.csv_line())?;
        }
        let score = report.as_ref().map_or(f64::NEG_INFINITY, selection_score);
        if best.as_ref().is_none_or(|(s, _)| score < *s || report.is_none()) {
            best = Some((score, trainer.checkpoint(report.as_ref())));
        }
        records.push(record);
        last_report = Some(report);
    }
    let report = match last_report {
        Some(r) => r,
        None => validate(&trainer)?,
    };
    let last = trainer.checkpoint(report.as_ref());
    let best = best.map_or_else(|| last.clone(), |(_, c)| c);
    Ok(TrainOutcome { best, last, records })
}
