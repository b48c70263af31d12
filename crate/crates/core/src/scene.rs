//! Scene-conditioned score aggregation.
//!
//! A pre-quality score `Q_p` is mapped onto each training scene's scale with
//! an affine pair `(a_i, b_i)` and the rescaled values are averaged with the
//! classifier's scene weights, restricted to the `k` most probable scenes:
//!
//! ```text
//! Q_f = sum_{i in topk} P_i (a_i Q_p + b_i) / sum_{j in topk} P_j
//! ```
//!
//! Everything here is pure and allocation-light; no gradients, no images.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of training scenes. Position `i` is the scene's index in
/// every probability vector and affine table built against this registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct SceneRegistry {
    scene_ids: Vec<String>,
}

impl SceneRegistry {
    pub fn new(scene_ids: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(scene_ids.len());
        for id in &scene_ids {
            if id.is_empty() {
                return Err(Error::Invalid("empty scene id".into()));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Invalid(format!("duplicate scene id {id:?}")));
            }
        }
        Ok(Self { scene_ids })
    }

    /// Registry with no scenes; only produced by loading an empty manifest.
    pub fn empty() -> Self {
        Self {
            scene_ids: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.scene_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene_ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.scene_ids
    }

    pub fn index_of(&self, scene_id: &str) -> Option<usize> {
        self.scene_ids.iter().position(|s| s == scene_id)
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.scene_ids.get(index).map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for SceneRegistry {
    type Error = Error;

    fn try_from(ids: Vec<String>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<SceneRegistry> for Vec<String> {
    fn from(r: SceneRegistry) -> Self {
        r.scene_ids
    }
}

/// Scene-membership weights. Entries are finite and non-negative; a zero
/// sum is representable but rejected by [`top_k_select`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbVector {
    weights: Vec<f64>,
}

impl ClassProbVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Degenerate("empty probability vector".into()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::Invalid(format!("weight {i} is {w}")));
        }
        Ok(Self { weights })
    }

    pub fn one_hot(len: usize, hot: usize) -> Result<Self> {
        if hot >= len {
            return Err(Error::OutOfRange { index: hot, len });
        }
        let mut w = vec![0.0; len];
        w[hot] = 1.0;
        Ok(Self { weights: w })
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::new(vec![1.0 / len as f64; len])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the largest weight, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate().skip(1) {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

/// Per-scene multiplier/offset pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAffineTable {
    multipliers: Vec<f64>,
    offsets: Vec<f64>,
}

impl SceneAffineTable {
    pub fn new(multipliers: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if multipliers.len() != offsets.len() {
            return Err(Error::Shape(format!(
                "{} multipliers vs {} offsets",
                multipliers.len(),
                offsets.len()
            )));
        }
        if multipliers.iter().chain(&offsets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine table".into()));
        }
        Ok(Self {
            multipliers,
            offsets,
        })
    }

    /// `a = 1`, `b = 0` for every scene.
    pub fn identity(scenes: usize) -> Self {
        Self {
            multipliers: vec![1.0; scenes],
            offsets: vec![0.0; scenes],
        }
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn pair(&self, index: usize) -> Result<(f64, f64)> {
        match (self.multipliers.get(index), self.offsets.get(index)) {
            (Some(&a), Some(&b)) => Ok((a, b)),
            _ => Err(Error::OutOfRange {
                index,
                len: self.len(),
            }),
        }
    }
}

/// Number of scenes kept in the weighted average. Values above the scene
/// count are truncated when applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct TopKPolicy {
    k: usize,
}

impl TopKPolicy {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("top-k must be at least 1".into()));
        }
        Ok(Self { k })
    }

    /// Keeps every scene of any registry.
    pub fn all() -> Self {
        Self { k: usize::MAX }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn effective(&self, scenes: usize) -> usize {
        self.k.min(scenes)
    }
}

impl TryFrom<usize> for TopKPolicy {
    type Error = Error;

    fn try_from(k: usize) -> Result<Self> {
        Self::new(k)
    }
}

impl From<TopKPolicy> for usize {
    fn from(p: TopKPolicy) -> usize {
        p.k
    }
}

/// Result of scoring one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityPrediction {
    pub patch_scores: Vec<f64>,
    pub pre_quality: f64,
    pub final_score: f64,
    pub class_probs: ClassProbVector,
}

/// Selected scenes (highest weight first) and their renormalised weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSelection {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

pub fn top_k_select(probs: &ClassProbVector, policy: TopKPolicy) -> Result<TopKSelection> {
    let w = probs.weights();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all-zero probability vector".into()));
    }
    let k = policy.effective(w.len());
    let mut order: Vec<usize> = (0..w.len()).collect();
    // Stable sort keeps the lower index first among equal weights.
    order.sort_by(|&i, &j| w[j].total_cmp(&w[i]));
    order.truncate(k);

    let kept: f64 = order.iter().map(|&i| w[i]).sum();
    let weights = order.iter().map(|&i| w[i] / kept).collect();
    Ok(TopKSelection {
        indices: order,
        weights,
    })
}

pub fn rescale_single_scene(
    pre_quality: f64,
    scene_index: usize,
    table: &SceneAffineTable,
) -> Result<f64> {
    let (a, b) = table.pair(scene_index)?;
    Ok(a * pre_quality + b)
}

pub fn aggregate_quality(
    pre_quality: f64,
    probs: &ClassProbVector,
    table: &SceneAffineTable,
    policy: TopKPolicy,
) -> Result<f64> {
    if probs.len() != table.len() {
        return Err(Error::Shape(format!(
            "{} scene weights vs affine table of {}",
            probs.len(),
            table.len()
        )));
    }
    let sel = top_k_select(probs, policy)?;
    let mut score = 0.0;
    for (&i, &w) in sel.indices.iter().zip(&sel.weights) {
        score += w * rescale_single_scene(pre_quality, i, table)?;
    }
    Ok(score)
}

/// Pools patch scores by their arithmetic mean and applies
/// [`aggregate_quality`]. Because the aggregation is affine in `Q_p`, this is
/// the same as rescaling every patch and averaging afterwards.
pub fn aggregate_image_from_patches(
    patch_scores: &[f64],
    probs: &ClassProbVector,
    table: &SceneAffineTable,
    policy: TopKPolicy,
) -> Result<QualityPrediction> {
    if patch_scores.is_empty() {
        return Err(Error::Degenerate("no patch scores".into()));
    }
    if patch_scores.iter().any(|q| !q.is_finite()) {
        return Err(Error::NonFinite("patch scores".into()));
    }
    let pre_quality = patch_scores.iter().sum::<f64>() / patch_scores.len() as f64;
    let final_score = aggregate_quality(pre_quality, probs, table, policy)?;
    if !final_score.is_finite() {
        return Err(Error::NonFinite("final score".into()));
    }
    Ok(QualityPrediction {
        patch_scores: patch_scores.to_vec(),
        pre_quality,
        final_score,
        class_probs: probs.clone(),
    })
}
