use serde::{Deserialize, Serialize};

use crate::dataset::Attribute;
use crate::error::{Error, Result};

/// How `decay_factor` is applied every `decay_every` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayRule {
    /// Multiply by `1 - decay_factor`.
    Complement,
    /// Multiply by `decay_factor`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub lr_backbone: f64,
    pub lr_heads: f64,
    /// Learning rate of the per-scene affine table; `lr_heads` when unset.
    pub lr_rescale: Option<f64>,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub decay_rule: DecayRule,
    pub patience: usize,
    pub huber_delta: f64,
    pub loss_weight_quality: f64,
    pub loss_weight_class: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of each training scene's images held out for early stopping.
    pub val_fraction: f64,
    /// Feed the ground-truth one-hot scene vector into the aggregation
    /// instead of the predicted one.
    pub teacher_force: bool,
    pub attribute: Attribute,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            lr_backbone: 1e-5,
            lr_heads: 1e-4,
            lr_rescale: None,
            decay_every: 10,
            decay_factor: 0.05,
            decay_rule: DecayRule::Complement,
            patience: 40,
            huber_delta: 1.0,
            loss_weight_quality: 1.0,
            loss_weight_class: 0.5,
            batch_size: 8,
            seed: 0,
            val_fraction: 0.15,
            teacher_force: false,
            attribute: Attribute::Overall,
        }
    }
}

impl TrainConfig {
    pub fn rescale_lr(&self) -> f64 {
        self.lr_rescale.unwrap_or(self.lr_heads)
    }

    /// Learning rates outside `[1e-6, 1e-4]`, by name.
    pub fn unusual_learning_rates(&self) -> Vec<(&'static str, f64)> {
        [
            ("lr_backbone", self.lr_backbone),
            ("lr_heads", self.lr_heads),
            ("lr_rescale", self.rescale_lr()),
        ]
        .into_iter()
        .filter(|(_, lr)| !(1e-6..=1e-4).contains(lr))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        for (name, lr) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_heads", self.lr_heads),
            ("lr_rescale", self.rescale_lr()),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} must be a positive number, got {lr}"));
            }
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs));
        }
        if self.decay_every == 0 {
            return bad("decay_every must be positive".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay_factor must lie in (0, 1), got {}", self.decay_factor));
        }
        if !(self.huber_delta.is_finite() && self.huber_delta > 0.0) {
            return bad(format!("huber_delta must be positive, got {}", self.huber_delta));
        }
        for (name, w) in [
            ("loss_weight_quality", self.loss_weight_quality),
            ("loss_weight_class", self.loss_weight_class),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("{name} must be non-negative, got {w}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction == 0.0 {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn reference_rates_are_not_flagged() {
        assert!(TrainConfig::default().unusual_learning_rates().is_empty());
        let c = TrainConfig { lr_rescale: Some(5e-2), ..TrainConfig::default() };
        assert_eq!(c.unusual_learning_rates(), vec![("lr_rescale", 5e-2)]);
    }

    #[test]
    fn invariants_enforced() {
        let base = TrainConfig::default();
        let cases = [
            TrainConfig { lr_heads: 0.0, ..base.clone() },
            TrainConfig { lr_backbone: f64::NAN, ..base.clone() },
            TrainConfig { patience: 301, ..base.clone() },
            TrainConfig { loss_weight_class: -0.1, ..base.clone() },
            TrainConfig { huber_delta: 0.0, ..base.clone() },
            TrainConfig { decay_every: 0, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { val_fraction: 1.0, ..base.clone() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(TrainConfig { lr_heads: 1e-2, ..base }.validate().is_ok());
    }
}
