use std::ops::Range;

use image::RgbImage;
use rayon::prelude::*;

use super::backbone::{to_chw, BackboneCache, ToyBackbone, SEMANTIC_DIM};
use super::heads::{Classifier, ClassifierCache, HyperCache, HyperHead, LinearProbe};
use super::params::{Init, ParamGroup, ParamStore};
use super::{HeadKind, ModelConfig};
use crate::dataset::{sample_patches, FaceRegion, PatchConfig};
use crate::error::{Error, Result};
use crate::scene::{aggregate_image_from_patches, ClassProbVector, QualityPrediction, SceneAffineTable, SceneRegistry};
use crate::util::seeded_rng;

/// Backbone outputs for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// Globally pooled last-stage features (length [`SEMANTIC_DIM`]).
    pub semantic_vector: Vec<f32>,
    /// Globally pooled features of every stage, shallow to deep.
    pub content_features: Vec<f32>,
}

#[derive(Debug, Clone)]
enum QualityHead {
    Hyper(HyperHead),
    Probe(LinearProbe),
}

enum HeadCache {
    Hyper(HyperCache),
    Probe,
}

/// Numerically stable softmax, computed in `f64`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    registry: SceneRegistry,
    params: ParamStore,
    backbone: ToyBackbone,
    classifier: Classifier,
    head: QualityHead,
    multipliers: Range<usize>,
    offsets: Range<usize>,
}

/// Forward pass over one image's patches with everything the backward pass
/// needs.
pub struct TrainForward {
    pub patch_scores: Vec<f64>,
    pub pre_quality: f64,
    pub logits: Vec<f64>,
    patches: Vec<PatchCache>,
    classifier: ClassifierCache,
}

struct PatchCache {
    backbone: BackboneCache,
    head: HeadCache,
    content: Vec<f32>,
}

impl Model {
    /// Fresh model with seeded initialisation and an identity affine table.
    pub fn new(mut config: ModelConfig, registry: SceneRegistry, seed: u64) -> Result<Self> {
        config.validate()?;
        if registry.is_empty() {
            return Err(Error::Degenerate("model needs at least one training scene".into()));
        }
        if config.num_scenes == 0 {
            config.num_scenes = registry.count();
        }
        if config.num_scenes != registry.count() {
            return Err(Error::Shape(format!(
                "config declares {} scenes, registry has {}",
                config.num_scenes,
                registry.count()
            )));
        }
        let mut rng = seeded_rng(&[seed, 0x1417]);
        let mut params = ParamStore::empty();
        let backbone = ToyBackbone::build(&mut params, &mut rng);
        let classifier = Classifier::build(&mut params, config.patches_per_image, config.num_scenes, &mut rng);
        let head = match config.hyper_head {
            HeadKind::Hypernetwork => QualityHead::Hyper(HyperHead::build(&mut params, &mut rng)),
            HeadKind::LinearProbe => QualityHead::Probe(LinearProbe::build(&mut params, &mut rng)),
        };
        let s = config.num_scenes;
        let multipliers = params.push("rescale.multiplier", &[s], ParamGroup::Rescale, Init::Const(1.0), &mut rng);
        let offsets = params.push("rescale.offset", &[s], ParamGroup::Rescale, Init::Zeros, &mut rng);
        Ok(Self {
            config,
            registry,
            params,
            backbone,
            classifier,
            head,
            multipliers,
            offsets,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn registry(&self) -> &SceneRegistry {
        &self.registry
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Buffer ranges of the affine multipliers and offsets.
    pub fn rescale_ranges(&self) -> (Range<usize>, Range<usize>) {
        (self.multipliers.clone(), self.offsets.clone())
    }

    pub fn affine_table(&self) -> SceneAffineTable {
        let v = self.params.values();
        let a = v[self.multipliers.clone()].iter().map(|&x| f64::from(x)).collect();
        let b = v[self.offsets.clone()].iter().map(|&x| f64::from(x)).collect();
        SceneAffineTable::new(a, b).expect("parameters are kept finite")
    }

    /// Overwrites the rescaling table (values are stored as `f32`).
    pub fn set_affine_table(&mut self, table: &SceneAffineTable) -> Result<()> {
        if table.len() != self.config.num_scenes {
            return Err(Error::Shape(format!(
                "table of {} scenes for a {}-scene model",
                table.len(),
                self.config.num_scenes
            )));
        }
        let (ra, rb) = self.rescale_ranges();
        let v = self.params.values_mut();
        for (dst, src) in v[ra].iter_mut().zip(table.multipliers()) {
            *dst = *src as f32;
        }
        for (dst, src) in v[rb].iter_mut().zip(table.offsets()) {
            *dst = *src as f32;
        }
        Ok(())
    }

    pub fn patch_config(&self, seed: u64) -> PatchConfig {
        PatchConfig {
            patch_size: self.config.input_size,
            patches_per_image: self.config.patches_per_image,
            seed,
        }
    }

    fn check_patch(&self, patch: &RgbImage) -> Result<()> {
        let side = self.config.input_size;
        if patch.width() != side || patch.height() != side {
            return Err(Error::Shape(format!(
                "patch is {}x{}, model expects {side}x{side}",
                patch.width(),
                patch.height()
            )));
        }
        Ok(())
    }

    fn backbone_forward(&self, patch: &RgbImage) -> Result<(FeatureBundle, BackboneCache)> {
        self.check_patch(patch)?;
        let (w, h) = (patch.width() as usize, patch.height() as usize);
        let (semantic, content, cache) = self.backbone.forward(self.params.values(), to_chw(patch), h, w);
        if semantic.iter().chain(&content).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backbone features".into()));
        }
        Ok((
            FeatureBundle {
                semantic_vector: semantic,
                content_features: content,
            },
            cache,
        ))
    }

    pub fn extract_features(&self, patch: &RgbImage) -> Result<FeatureBundle> {
        self.backbone_forward(patch).map(|(b, _)| b)
    }

    fn concat_semantic(&self, bundles: &[FeatureBundle]) -> Result<Vec<f32>> {
        if bundles.len() != self.config.patches_per_image {
            return Err(Error::Shape(format!(
                "classifier takes {} patches, got {}",
                self.config.patches_per_image,
                bundles.len()
            )));
        }
        let mut input = Vec::with_capacity(SEMANTIC_DIM * bundles.len());
        for b in bundles {
            if b.semantic_vector.len() != SEMANTIC_DIM {
                return Err(Error::Shape(format!(
                    "semantic vector of length {}, expected {SEMANTIC_DIM}",
                    b.semantic_vector.len()
                )));
            }
            input.extend_from_slice(&b.semantic_vector);
        }
        Ok(input)
    }

    /// Raw classifier outputs, one per training scene.
    pub fn scene_logits(&self, bundles: &[FeatureBundle]) -> Result<Vec<f64>> {
        let input = self.concat_semantic(bundles)?;
        let (logits, _) = self.classifier.forward(self.params.values(), input);
        to_finite_f64(&logits, "classifier logits")
    }

    pub fn classify_scene(&self, bundles: &[FeatureBundle]) -> Result<ClassProbVector> {
        ClassProbVector::new(softmax(&self.scene_logits(bundles)?))
    }

    pub fn predict_pre_quality(&self, bundle: &FeatureBundle) -> Result<f64> {
        self.head_forward(bundle).map(|(q, _)| q)
    }

    fn head_forward(&self, bundle: &FeatureBundle) -> Result<(f64, HeadCache)> {
        let p = self.params.values();
        if bundle.content_features.len() != super::CONTENT_DIM || bundle.semantic_vector.len() != SEMANTIC_DIM {
            return Err(Error::Shape("feature bundle does not match the backbone".into()));
        }
        let (q, cache) = match &self.head {
            QualityHead::Hyper(h) => {
                let (q, c) = h.forward(p, &bundle.semantic_vector, &bundle.content_features);
                (q, HeadCache::Hyper(c))
            }
            QualityHead::Probe(h) => (h.forward(p, &bundle.content_features), HeadCache::Probe),
        };
        if !q.is_finite() {
            let layer = match self.head {
                QualityHead::Hyper(_) => "hypernetwork target output",
                QualityHead::Probe(_) => "linear probe output",
            };
            return Err(Error::NonFinite(layer.into()));
        }
        Ok((f64::from(q), cache))
    }

    /// Scores pre-cut patches against `table`.
    pub fn forward_patches_with(&self, patches: &[RgbImage], table: &SceneAffineTable) -> Result<QualityPrediction> {
        let per_patch: Vec<(FeatureBundle, f64)> = patches
            .par_iter()
            .map(|p| {
                let b = self.extract_features(p)?;
                let q = self.predict_pre_quality(&b)?;
                Ok((b, q))
            })
            .collect::<Result<_>>()?;
        let (bundles, scores): (Vec<_>, Vec<_>) = per_patch.into_iter().unzip();
        let probs = self.classify_scene(&bundles)?;
        aggregate_image_from_patches(&scores, &probs, table, self.config.top_k)
    }

    pub fn forward_patches(&self, patches: &[RgbImage]) -> Result<QualityPrediction> {
        self.forward_patches_with(patches, &self.affine_table())
    }

    /// Samples this model's patch layout from `image` (restricted to `roi`)
    /// and scores it. `identity` and `seed` fix the crop positions.
    pub fn forward_image(&self, image: &RgbImage, identity: &str, roi: Option<FaceRegion>, seed: u64) -> Result<QualityPrediction> {
        let patches = sample_patches(image, &self.patch_config(seed), roi, identity)?;
        let rasters: Vec<RgbImage> = patches.into_iter().map(|p| p.raster).collect();
        self.forward_patches(&rasters)
    }

    /// Training forward pass keeping activations.
    pub fn forward_train(&self, patches: &[RgbImage]) -> Result<TrainForward> {
        let per_patch: Vec<(FeatureBundle, f64, PatchCache)> = patches
            .iter()
            .map(|p| {
                let (bundle, backbone) = self.backbone_forward(p)?;
                let (q, head) = self.head_forward(&bundle)?;
                let content = bundle.content_features.clone();
                Ok((bundle, q, PatchCache { backbone, head, content }))
            })
            .collect::<Result<_>>()?;
        let mut bundles = Vec::with_capacity(per_patch.len());
        let mut patch_scores = Vec::with_capacity(per_patch.len());
        let mut caches = Vec::with_capacity(per_patch.len());
        for (b, q, c) in per_patch {
            bundles.push(b);
            patch_scores.push(q);
            caches.push(c);
        }
        let input = self.concat_semantic(&bundles)?;
        let (logits, classifier) = self.classifier.forward(self.params.values(), input);
        let logits = to_finite_f64(&logits, "classifier logits")?;
        let pre_quality = patch_scores.iter().sum::<f64>() / patch_scores.len() as f64;
        Ok(TrainForward {
            patch_scores,
            pre_quality,
            logits,
            patches: caches,
            classifier,
        })
    }

    /// Accumulates into `grad` the parameter gradient of a loss whose
    /// gradients with respect to `Q_p` and the logits are given. Gradients
    /// of the affine table are the caller's to add.
    pub fn backward(&self, fwd: &TrainForward, d_pre_quality: f64, d_logits: &[f64], grad: &mut [f32]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let p = self.params.values();
        let dl: Vec<f32> = d_logits.iter().map(|&v| v as f32).collect();
        let d_concat = self.classifier.backward(p, &fwd.classifier, &dl, grad);
        let dq = (d_pre_quality / fwd.patches.len() as f64) as f32;
        for (i, cache) in fwd.patches.iter().enumerate() {
            let mut d_sem = d_concat[i * SEMANTIC_DIM..(i + 1) * SEMANTIC_DIM].to_vec();
            let d_content = match (&self.head, &cache.head) {
                (QualityHead::Hyper(h), HeadCache::Hyper(c)) => {
                    let (ds, dc) = h.backward(p, c, dq, grad);
                    for (a, b) in d_sem.iter_mut().zip(&ds) {
                        *a += b;
                    }
                    dc
                }
                (QualityHead::Probe(h), _) => h.backward(p, &cache.content, dq, grad),
                _ => unreachable!("cache built by the same head"),
            };
            self.backbone.backward(p, &cache.backbone, &d_sem, &d_content, grad);
        }
    }
}

fn to_finite_f64(values: &[f32], what: &str) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(values.iter().map(|&v| f64::from(v)).collect())
}
