//! Multitask objective and its gradient with respect to the scene logits,
//! the affine table and the pre-quality score. All in `f64`.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::network::softmax;
use crate::scene::{top_k_select, ClassProbVector, SceneAffineTable, TopKPolicy};

pub fn huber_loss(pred: f64, target: f64, delta: f64) -> f64 {
    let r = (pred - target).abs();
    if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    }
}

/// Derivative of [`huber_loss`] with respect to `pred`.
pub fn huber_grad(pred: f64, target: f64, delta: f64) -> f64 {
    let r = pred - target;
    r.clamp(-delta, delta)
}

/// `-log softmax(logits)[target]`, via log-sum-exp.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::OutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok((lse - logits[target]).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub huber: f64,
    pub ce: f64,
}

pub fn multitask_loss(
    quality_pred: f64,
    quality_target: f64,
    class_logits: &[f64],
    class_target: usize,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let ce = cross_entropy(class_logits, class_target)?;
    let huber = huber_loss(quality_pred, quality_target, config.huber_delta);
    Ok(LossBreakdown {
        total: config.loss_weight_quality * huber + config.loss_weight_class * ce,
        huber,
        ce,
    })
}

/// Loss value, final score and gradients of one image's head computation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub loss: LossBreakdown,
    pub final_score: f64,
    pub d_pre_quality: f64,
    pub d_logits: Vec<f64>,
    pub d_multipliers: Vec<f64>,
    pub d_offsets: Vec<f64>,
}

/// Applies softmax, top-k aggregation and the multitask loss, returning
/// analytic gradients. The top-k set is treated as locally constant.
pub fn head_loss_and_grad(
    pre_quality: f64,
    logits: &[f64],
    table: &SceneAffineTable,
    top_k: TopKPolicy,
    quality_target: f64,
    class_target: usize,
    config: &TrainConfig,
) -> Result<HeadGradient> {
    let s = logits.len();
    if table.len() != s {
        return Err(Error::Shape(format!("{s} logits vs affine table of {}", table.len())));
    }
    if class_target >= s {
        return Err(Error::OutOfRange { index: class_target, len: s });
    }
    let probs = softmax(logits);
    let weights = if config.teacher_force {
        ClassProbVector::one_hot(s, class_target)?
    } else {
        ClassProbVector::new(probs.clone())?
    };
    let sel = top_k_select(&weights, top_k)?;
    let (a, b) = (table.multipliers(), table.offsets());
    let rescaled: Vec<f64> = sel.indices.iter().map(|&i| a[i] * pre_quality + b[i]).collect();
    let final_score: f64 = sel.weights.iter().zip(&rescaled).map(|(w, r)| w * r).sum();

    let loss = multitask_loss(final_score, quality_target, logits, class_target, config)?;
    let g = config.loss_weight_quality * huber_grad(final_score, quality_target, config.huber_delta);

    let mut d_multipliers = vec![0.0; s];
    let mut d_offsets = vec![0.0; s];
    let mut d_pre_quality = 0.0;
    for (&i, &w) in sel.indices.iter().zip(&sel.weights) {
        d_multipliers[i] = g * w * pre_quality;
        d_offsets[i] = g * w;
        d_pre_quality += g * w * a[i];
    }

    let mut d_logits: Vec<f64> = probs.iter().map(|p| config.loss_weight_class * p).collect();
    d_logits[class_target] -= config.loss_weight_class;
    if !config.teacher_force {
        let kept: f64 = sel.indices.iter().map(|&i| probs[i]).sum();
        let mut d_probs = vec![0.0; s];
        for (&i, r) in sel.indices.iter().zip(&rescaled) {
            d_probs[i] = g * (r - final_score) / kept;
        }
        let mean: f64 = probs.iter().zip(&d_probs).map(|(p, d)| p * d).sum();
        for ((dz, p), d) in d_logits.iter_mut().zip(&probs).zip(&d_probs) {
            *dz += p * (d - mean);
        }
    }

    Ok(HeadGradient {
        loss,
        final_score,
        d_pre_quality,
        d_logits,
        d_multipliers,
        d_offsets,
    })
}
