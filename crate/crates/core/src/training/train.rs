use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, OptimizerState, PlateauScheduler, TrainSchedule};
use crate::error::{Error, Result};
use crate::hsi_io::{Checkpoint, CheckpointMeta};
use crate::metrics::classify;
use crate::model::{forward, Mode, ModelConfig, ModelParams};
use crate::preprocess::PatchSet;
use crate::tensor::Tape;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's training samples.
    pub train_loss: f64,
    pub val_oa: f64,
    /// Rate used for this epoch's updates.
    pub lr: f64,
}

/// Keeps the value offered with the highest score; ties keep the earlier one.
#[derive(Clone, Debug, Default)]
pub struct BestSoFar<T> {
    best: Option<(usize, f64, T)>,
}

impl<T> BestSoFar<T> {
    pub fn new() -> Self {
        BestSoFar { best: None }
    }

    /// Stores `make()` when `score` strictly beats everything seen so far.
    pub fn offer(&mut self, epoch: usize, score: f64, make: impl FnOnce() -> T) -> bool {
        if self.best.as_ref().is_none_or(|(_, b, _)| score > *b) {
            self.best = Some((epoch, score, make()));
            return true;
        }
        false
    }

    pub fn epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn score(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    pub fn into_inner(self) -> Option<(usize, f64, T)> {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation OA.
    pub params: ModelParams,
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub best_val_oa: f64,
    pub log: Vec<EpochRecord>,
    /// Parameters after the final epoch.
    pub last_params: ModelParams,
}

/// Trains from a seeded initialisation and keeps the best-validation weights.
///
/// Each epoch shuffles the training indices with a generator seeded by
/// `seed + epoch`, which also drives dropout. The last batch may be partial.
/// The checkpoint is replaced only when validation OA strictly improves.
pub fn train(
    cfg: &ModelConfig,
    set: &PatchSet,
    train_idx: &[usize],
    val_idx: &[usize],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Contract(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train_idx.len(),
            val_idx.len()
        )));
    }
    let mut params = ModelParams::init(cfg, schedule.seed)?;
    let mut opt = OptimizerState::new(&params, schedule.initial_lr);
    let mut scheduler = PlateauScheduler::new(schedule);
    let mut best = BestSoFar::new();
    let mut log = Vec::with_capacity(schedule.max_epochs);
    let val_refs = set.labels_of(val_idx);

    for epoch in 1..=schedule.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed.wrapping_add(epoch as u64));
        let mut order = train_idx.to_vec();
        order.shuffle(&mut rng);
        let lr = scheduler.lr();
        opt.lr = lr;
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let x = tape.constant(set.batch(chunk));
            let logits = forward(&mut tape, &bound, cfg, x, &mut Mode::Train(&mut rng))?;
            let loss = tape.cross_entropy(logits, &set.labels_of(chunk))?;
            let value = tape.value(loss).item()? as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            tape.backward(loss)?;
            let grads: IndexMap<String, Vec<f32>> = bound
                .iter()
                .map(|(name, v)| (name.to_string(), tape.grad(v).map(<[f32]>::to_vec).unwrap_or_default()))
                .collect();
            adam_step(&mut params, &grads, &mut opt)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            loss_sum += value * chunk.len() as f64;
        }

        let preds = classify(&params, cfg, set, val_idx, schedule.batch_size)?;
        let correct = preds.iter().zip(&val_refs).filter(|(p, r)| p == r).count();
        let val_oa = correct as f64 / val_idx.len() as f64;
        best.offer(epoch, val_oa, || params.clone());
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_oa,
            lr,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val_oa {:.4} lr {:e}",
            record.train_loss,
            val_oa,
            lr
        );
        log.push(record);
        scheduler.update(val_oa);
    }

    let last_params = params;
    let (best_epoch, best_val_oa, params) = best.into_inner().expect("at least one epoch");
    let checkpoint = params.to_checkpoint(CheckpointMeta {
        epoch: best_epoch as u32,
        val_accuracy: best_val_oa,
        has_optimizer_state: false,
    })?;
    Ok(TrainOutcome {
        params,
        checkpoint,
        best_epoch,
        best_val_oa,
        log,
        last_params,
    })
}
