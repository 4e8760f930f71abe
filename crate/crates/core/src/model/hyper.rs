use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epoch at which a schedule boundary expressed as a fraction of the run
/// takes effect: `ceil(fraction * total_epochs)`. A 1e-9 slack absorbs
/// binary representation error (0.7 * 200 must give 140, not 141).
pub fn boundary_epoch(fraction: f64, total_epochs: usize) -> usize {
    (fraction * total_epochs as f64 - 1e-9).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub base_lr: f64,
    pub decay_factor: f64,
    /// Fractions of `total_epochs` after which the rate is multiplied by
    /// `decay_factor`.
    pub decay_milestones: Vec<f64>,
    pub nesterov_momentum: f64,
    pub weight_decay: f64,
    /// Fraction of epochs trained without augmentation.
    pub warmup_epochs_fraction: f64,
    pub total_epochs: usize,
    pub batch_size: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            base_lr: 0.1,
            decay_factor: 0.2,
            decay_milestones: vec![0.25, 0.5, 0.7],
            nesterov_momentum: 0.9,
            weight_decay: 5e-4,
            warmup_epochs_fraction: 0.05,
            total_epochs: 16,
            batch_size: 128,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0 && self.decay_factor > 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rate and decay factor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.nesterov_momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.nesterov_momentum));
        }
        if !(0.0..1.0).contains(&self.warmup_epochs_fraction) {
            return bad("warm-up fraction must be in [0, 1)".into());
        }
        let mut prev = 0.0;
        for &m in &self.decay_milestones {
            if !(m > prev && m < 1.0) {
                return bad(format!(
                    "milestones must be strictly increasing in (0, 1): {:?}",
                    self.decay_milestones
                ));
            }
            prev = m;
        }
        if self.total_epochs == 0 || self.batch_size == 0 {
            return bad("total_epochs and batch_size must be positive".into());
        }
        Ok(())
    }

    pub fn milestone_epochs(&self) -> Vec<usize> {
        self.decay_milestones
            .iter()
            .map(|&m| boundary_epoch(m, self.total_epochs))
            .collect()
    }

    pub fn warmup_epochs(&self) -> usize {
        boundary_epoch(self.warmup_epochs_fraction, self.total_epochs)
    }

    /// `base_lr * decay_factor^(milestones passed)`; a milestone epoch
    /// already uses the decayed rate.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .milestone_epochs()
            .into_iter()
            .filter(|&m| epoch >= m)
            .count();
        self.base_lr * self.decay_factor.powi(passed as i32)
    }
}
