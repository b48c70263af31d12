use serde::{Deserialize, Serialize};

use super::config::{DecayRule, TrainConfig};
use super::loss::LossBreakdown;

/// Step-decayed learning rate: one decay every `decay_every` epochs.
pub fn lr_at_epoch(base_lr: f64, epoch: usize, config: &TrainConfig) -> f64 {
    let factor = match config.decay_rule {
        DecayRule::Complement => 1.0 - config.decay_factor,
        DecayRule::Literal => config.decay_factor,
    };
    let steps = (epoch / config.decay_every) as i32;
    base_lr * factor.powi(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_median_srcc: f64,
    pub lr_backbone: f64,
    pub lr_heads: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Index of the next epoch to run (equivalently, epochs completed).
    pub epoch: usize,
    pub best_val_srcc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_best: usize,
    /// Seed of the per-epoch shuffling and cropping streams.
    pub rng_seed: u64,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            epoch: 0,
            best_val_srcc: None,
            best_epoch: None,
            epochs_since_best: 0,
            rng_seed,
            history: Vec::new(),
        }
    }
}

/// Records the validation score of epoch `state.epoch`. The best score only
/// moves on strict improvement; `stop` is raised once `patience` epochs
/// have passed without one.
pub fn early_stop_update(mut state: TrainState, val_srcc: f64, patience: usize) -> (TrainState, bool) {
    let improved = state.best_val_srcc.is_none_or(|best| val_srcc > best);
    if improved {
        state.best_val_srcc = Some(val_srcc);
        state.best_epoch = Some(state.epoch);
        state.epochs_since_best = 0;
    } else {
        state.epochs_since_best = state.epoch - state.best_epoch.unwrap_or(0);
    }
    let stop = state.epochs_since_best >= patience;
    (state, stop)
}
