//! Triangular learning-rate cycling and early stopping.

use crate::error::{Error, Result};

/// A triangular wave between `base_lr` and `max_lr`, exactly periodic in
/// `period_steps` optimizer steps with no amplitude decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub max_lr: f64,
    pub period_steps: usize,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::Config("learning rates must be positive and finite".into()));
        }
        if self.base_lr > self.max_lr {
            return Err(Error::Config(format!(
                "base rate {} exceeds max rate {}",
                self.base_lr, self.max_lr
            )));
        }
        if self.period_steps < 2 {
            return Err(Error::Config("cycle period must span at least 2 steps".into()));
        }
        Ok(())
    }
}

/// Learning rate at a step: linear base-to-max over the first half period,
/// max-to-base over the second.
pub fn cyclic_lr(step: usize, sched: &LrSchedule) -> f64 {
    let phase = (step % sched.period_steps) as f64;
    let half = sched.period_steps as f64 / 2.0;
    let x = phase / half;
    sched.base_lr + (sched.max_lr - sched.base_lr) * (1.0 - (x - 1.0).abs())
}

/// Stops training when the best validation loss has not strictly improved
/// for `patience` consecutive epochs; a tie counts as no improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> EarlyStopper {
        EarlyStopper { patience, best_loss: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    /// Records one epoch's validation loss and returns whether training
    /// should stop after it. A non-finite loss never counts as improvement.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    /// True when the most recent observation set a new best.
    pub fn just_improved(&self) -> bool {
        self.since_best == 0 && self.best_epoch > 0
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}
