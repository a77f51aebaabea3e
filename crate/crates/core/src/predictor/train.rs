//! Mini-batch SGD with momentum over prepared records.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::predictor::history::DatasetRecord;
use crate::predictor::eval::ade_fde;
use crate::predictor::loss::{total_loss_with, RegressionKind};
use crate::predictor::model::{ModelConfig, ModelInput, ModelParams, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Classification weight.
    pub alpha: f64,
    /// Huber transition in metres; `None` keeps the plain Euclidean norm.
    pub huber_delta: Option<f64>,
    /// Records per gradient work unit. Partial gradients are summed in index
    /// order, so results do not depend on how many workers run them.
    pub grad_chunk: usize,
    /// Anneal the step size from `lr` toward zero along a half cosine over
    /// the run; off keeps `lr` constant.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            momentum: 0.9,
            batch: 32,
            epochs: 10,
            alpha: 1.0,
            huber_delta: None,
            grad_chunk: 8,
            cosine_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn regression(&self) -> RegressionKind {
        match self.huber_delta {
            Some(delta) => RegressionKind::Huber { delta },
            None => RegressionKind::Euclidean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("lr must be > 0 and momentum in [0, 1)"));
        }
        if self.batch == 0 || self.grad_chunk == 0 {
            return Err(Error::config("batch and grad_chunk must be positive"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::config("alpha must be >= 0"));
        }
        if matches!(self.huber_delta, Some(d) if !(d > 0.0)) {
            return Err(Error::config("huber_delta must be > 0"));
        }
        Ok(())
    }

    /// Step size used throughout `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if !self.cosine_decay || self.epochs == 0 {
            return self.lr;
        }
        let frac = (epoch.saturating_sub(1)) as f64 / self.epochs as f64;
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// A record ready for the network.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: ModelInput,
    pub target: Vec<[f64; 2]>,
}

pub fn prepare(model: &ModelParams, records: &[DatasetRecord]) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            if r.future.len() != model.config.horizon {
                return Err(Error::Shape(format!(
                    "record horizon {} but model horizon {}",
                    r.future.len(),
                    model.config.horizon
                )));
            }
            Ok(Sample {
                input: model.encode_input(&r.history, &r.bev)?,
                target: r.future.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss seen during the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean ADE of the most probable mode on the validation set, in metres;
    /// NaN when training without one.
    pub val_ade: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: ModelParams,
    pub initial_train_loss: f64,
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn write_curve_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.curve {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mean loss and mean ADE of the most probable mode over a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetScore {
    pub loss: f64,
    pub ade: f64,
}

/// Scores `samples` in fixed chunks; one forward pass yields both numbers.
pub fn score_set(model: &ModelParams, samples: &[Sample], alpha: f64, kind: RegressionKind) -> SetScore {
    if samples.is_empty() {
        return SetScore { loss: 0.0, ade: 0.0 };
    }
    let parts = par::map_chunks(samples, 64, |chunk| {
        let inputs: Vec<&ModelInput> = chunk.iter().map(|s| &s.input).collect();
        let pass = model.forward(&inputs);
        let mut loss = 0.0;
        let mut ade = 0.0;
        for (b, s) in chunk.iter().enumerate() {
            let cands = model.decode(&pass, b);
            loss += total_loss_with(&cands, &s.target, alpha, kind);
            ade += ade_fde(cands.best(), &s.target, s.target.len()).0;
        }
        (loss, ade)
    });
    let n = samples.len() as f64;
    let (loss, ade) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    SetScore { loss: loss / n, ade: ade / n }
}

/// Mean loss over `samples`.
pub fn mean_loss(model: &ModelParams, samples: &[Sample], alpha: f64, kind: RegressionKind) -> f64 {
    score_set(model, samples, alpha, kind).loss
}

fn batch_gradient(model: &ModelParams, batch: &[&Sample], cfg: &TrainConfig) -> (f64, Vec<f64>) {
    let kind = cfg.regression();
    let parts = par::map_chunks(batch, cfg.grad_chunk, |chunk| {
        let inputs: Vec<&ModelInput> = chunk.iter().map(|s| &s.input).collect();
        let targets: Vec<&[[f64; 2]]> = chunk.iter().map(|s| s.target.as_slice()).collect();
        model.loss_and_grad_sum(&inputs, &targets, cfg.alpha, kind)
    });
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    grad.iter_mut().for_each(|v| *v /= n);
    (loss / n, grad)
}

/// Trains a freshly initialized model. `seed` drives both initialization and
/// the per-epoch shuffles.
pub fn train(
    model_cfg: ModelConfig,
    variant: Variant,
    grid: usize,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut model = ModelParams::init(model_cfg, variant, grid, seed)?;
    let kind = cfg.regression();
    let initial = score_set(&model, train_set, cfg.alpha, kind);
    let initial_train_loss = initial.loss;
    let score = |m: &ModelParams, train: SetScore| {
        if val_set.is_empty() {
            train
        } else {
            score_set(m, val_set, cfg.alpha, kind)
        }
    };
    let mut best = (score(&model, initial).loss, 0, model.values().to_vec());
    let mut velocity = vec![0.0; model.num_params()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_5A3D);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = batch_gradient(&model, &batch, cfg);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b, loss });
            }
            for ((p, v), g) in model.values_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - lr * g;
                *p += *v;
            }
            sum += loss;
            batches += 1;
        }
        let train_loss = sum / batches as f64;
        // without a validation set, the running batch mean stands in
        let val = score(&model, SetScore { loss: train_loss, ade: f64::NAN });
        let val_loss = val.loss;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batches,
                loss: val_loss,
            });
        }
        if val_loss < best.0 {
            best = (val_loss, epoch, model.values().to_vec());
        }
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_ade: val.ade,
        });
    }
    let (_, best_epoch, values) = best;
    model.values_mut().copy_from_slice(&values);
    Ok(TrainOutcome {
        model,
        initial_train_loss,
        curve,
        best_epoch,
    })
}
