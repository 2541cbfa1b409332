use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimisation hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Epochs without strict validation improvement before decaying.
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    /// Seeds parameter initialisation, shuffling and dropout. Supplied per
    /// run, so never part of the JSON section.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            max_epochs: 100,
            batch_size: 32,
            initial_lr: 1e-3,
            plateau_patience: 10,
            lr_factor: 0.5,
            min_lr: 1e-5,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.max_epochs == 0 || self.batch_size == 0 || self.plateau_patience == 0 {
            return bad("max_epochs, batch_size and plateau_patience must be >= 1");
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr && self.initial_lr.is_finite()) {
            return bad("learning rates must satisfy 0 < min_lr <= initial_lr");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Reduce-on-plateau decay driven by validation accuracy.
///
/// The first observation sets the reference. Each later observation that
/// does not strictly exceed the best so far increments a counter; when it
/// reaches `patience` the rate is multiplied by `factor` (floored at
/// `min_lr`) and the counter restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: Option<f64>,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(schedule: &TrainSchedule) -> Self {
        PlateauScheduler {
            lr: schedule.initial_lr,
            factor: schedule.lr_factor,
            patience: schedule.plateau_patience,
            min_lr: schedule.min_lr,
            best: None,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one epoch's validation accuracy and returns the rate for the next epoch.
    pub fn update(&mut self, val_accuracy: f64) -> f64 {
        if self.best.is_none_or(|b| val_accuracy > b) {
            self.best = Some(val_accuracy);
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Learning rate in force after each epoch of `history`.
pub fn replay_schedule(history: &[f64], schedule: &TrainSchedule) -> Vec<f64> {
    let mut s = PlateauScheduler::new(schedule);
    history.iter().map(|&v| s.update(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rising_accuracy_keeps_rate() {
        let h: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        assert!(replay_schedule(&h, &TrainSchedule::default())
            .iter()
            .all(|&lr| lr == 1e-3));
    }

    #[test]
    fn ties_count_as_no_improvement() {
        let mut s = PlateauScheduler::new(&TrainSchedule {
            plateau_patience: 2,
            ..TrainSchedule::default()
        });
        s.update(0.5);
        s.update(0.5);
        assert_eq!(s.update(0.5), 5e-4);
    }
}
