//! Mini-batch ADAM training on the sequence loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Poses, WindowedExample};
use crate::math;
use crate::metrics::{sequence_loss, sequence_loss_on_tape};
use crate::model::{poses_to_tensor, Mode, SesGcnModel};
use crate::numerics::{AdamState, Decay};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clamped to the number of training windows.
    pub batch_size: usize,
    pub base_lr: f64,
    /// Epochs (numbered from 1) at which the rate is multiplied by
    /// `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` trains without clipping.
    pub clip_norm: Option<f64>,
    /// Windows per forward pass when computing the validation loss.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 256,
            base_lr: 0.1,
            decay_epochs: vec![5, 20, 30, 37],
            decay_factor: 0.1,
            seed: 0,
            clip_norm: Some(10.0),
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(self.decay_factor > 0.0) || !self.decay_factor.is_finite() {
            return Err(Error::config(format!(
                "decay_factor must be > 0, got {}",
                self.decay_factor
            )));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("decay_epochs must be strictly increasing"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Vec<Decay> {
        self.decay_epochs
            .iter()
            .map(|&epoch| Decay {
                epoch,
                multiplier: self.decay_factor,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Window-weighted mean of the mini-batch losses, millimeters.
    pub train_loss_mm: f64,
    pub val_loss_mm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss_mm: f64,
    /// Parameters as they were after `best_epoch`.
    pub best: SesGcnModel,
}

/// Mean sequence loss over `windows` in evaluation mode. Reads the model
/// only.
pub fn validation_loss(model: &SesGcnModel, windows: &[WindowedExample], batch: usize) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Empty("validation set has no windows".into()));
    }
    let mut total = 0.0;
    for chunk in windows.chunks(batch.max(1)) {
        let inputs: Vec<&Poses> = chunk.iter().map(|w| &w.input).collect();
        let preds = model.predict(&inputs)?;
        for (p, w) in preds.iter().zip(chunk) {
            total += sequence_loss(p, &w.target)?;
        }
    }
    Ok(total / windows.len() as f64)
}

fn clip_gradients(model: &mut SesGcnModel, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, p) in model.store_mut().learnable_mut() {
        if let Some(g) = &p.grad {
            sq += g.sum_squares();
        }
    }
    let norm = math::sqrt(sq);
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, p) in model.store_mut().learnable_mut() {
            if let Some(g) = &mut p.grad {
                for x in g.data_mut() {
                    *x *= s;
                }
            }
        }
    }
    norm
}

fn train_step(
    model: &mut SesGcnModel,
    adam: &mut AdamState,
    batch: &[&WindowedExample],
    epoch: usize,
    clip: Option<f64>,
) -> Result<f64> {
    let inputs: Vec<&Poses> = batch.iter().map(|w| &w.input).collect();
    let targets: Vec<&Poses> = batch.iter().map(|w| &w.target).collect();
    let mut fwd = model.forward(&inputs, Mode::Train)?;
    let truth = fwd.tape.constant(poses_to_tensor(&targets)?);
    let loss = sequence_loss_on_tape(&mut fwd.tape, fwd.prediction, truth)?;
    let value = fwd.tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NumericFault { op: "sequence_loss" });
    }
    let grads = fwd.tape.backward(loss)?;
    let store = model.store_mut();
    store.zero_grad();
    store.accumulate(&grads, &fwd.bound)?;
    if let Some(c) = clip {
        if !clip_gradients(model, c).is_finite() {
            return Err(Error::NumericFault { op: "gradient_norm" });
        }
    }
    adam.step(model.store_mut().learnable_mut(), epoch)?;
    model.update_running_stats(&fwd.batch_stats)?;
    Ok(value)
}

fn without_grads(model: &SesGcnModel) -> SesGcnModel {
    let mut m = model.clone();
    m.store_mut().zero_grad();
    m
}

/// Trains `model` in place and returns the loss history with a snapshot of
/// the best-validation parameters.
///
/// Windows are reshuffled every epoch from a generator seeded once with
/// `cfg.seed`; the last partial batch is kept. If the loss or an update
/// turns non-finite, `model` is reset to the best snapshot so far (or its
/// initial state) and [`Error::Diverged`] is returned.
pub fn train(
    model: &mut SesGcnModel,
    train_set: &[WindowedExample],
    val_set: &[WindowedExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set has no windows".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set has no windows".into()));
    }
    let batch_size = cfg.batch_size.min(train_set.len());
    let mut adam = AdamState::new(cfg.base_lr, cfg.schedule())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, SesGcnModel)> = None;
    let initial = without_grads(model);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut step_result = Ok(());
        for idx in order.chunks(batch_size) {
            let batch: Vec<&WindowedExample> = idx.iter().map(|&i| &train_set[i]).collect();
            match train_step(model, &mut adam, &batch, epoch, cfg.clip_norm) {
                Ok(loss) => total += loss * batch.len() as f64,
                Err(e) => {
                    step_result = Err(e);
                    break;
                }
            }
        }
        let val = step_result.and_then(|_| validation_loss(model, val_set, cfg.eval_batch_size));
        let val = match val {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NumericFault { .. }) => {
                let last_good_epoch = best.as_ref().map(|b| b.0);
                *model = best.map(|b| b.2).unwrap_or(initial);
                log::error!("training diverged at epoch {epoch}");
                return Err(Error::Diverged {
                    epoch,
                    last_good_epoch,
                });
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss_mm: total / train_set.len() as f64,
            val_loss_mm: val,
            lr: adam.learning_rate_at(epoch),
        };
        log::info!(
            "epoch {epoch}/{}: train {:.3} mm, validation {:.3} mm, lr {:e}",
            cfg.epochs,
            record.train_loss_mm,
            record.val_loss_mm,
            record.lr
        );
        if best.as_ref().is_none_or(|b| val < b.1) {
            best = Some((epoch, val, without_grads(model)));
        }
        history.push(record);
    }
    model.store_mut().zero_grad();
    let (best_epoch, best_val_loss_mm, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss_mm,
        best,
    })
}
