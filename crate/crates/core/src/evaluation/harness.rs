use rayon::prelude::*;

use super::histogram::class_distribution_histogram;
use super::metrics::{compute_scene_metrics, MetricRecord};
use crate::dataset::{load_rgb, AnnotatedImage, Attribute, Manifest};
use crate::error::{Error, Result};
use crate::network::Model;
use crate::scene::{ClassProbVector, SceneRegistry};

/// One scored image.
#[derive(Debug, Clone)]
pub struct ImageResult {
    pub image_path: String,
    pub scene_id: String,
    pub target: f64,
    pub pre_quality: f64,
    pub prediction: f64,
    pub class_probs: ClassProbVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneHistogram {
    pub scene_id: String,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<MetricRecord>,
    /// Scenes left out of the medians, with the reason.
    pub excluded: Vec<(String, String)>,
    pub histograms: Vec<SceneHistogram>,
}

/// Scores `images` with `model`, in input order. Exposure and Details are
/// scored inside the face region when the manifest provides one.
pub fn predict_images(
    model: &Model,
    manifest: &Manifest,
    images: &[&AnnotatedImage],
    attribute: Attribute,
    patch_seed: u64,
) -> Result<Vec<ImageResult>> {
    images
        .par_iter()
        .map(|img| {
            let target = img.score(attribute).ok_or_else(|| {
                Error::Invalid(format!("{} has no {attribute:?} score", img.image_path))
            })?;
            let raster = load_rgb(&manifest.resolve(img))?;
            let roi = if attribute.uses_face_region() { img.face_region } else { None };
            let pred = model.forward_image(&raster, &img.image_path, roi, patch_seed)?;
            Ok(ImageResult {
                image_path: img.image_path.clone(),
                scene_id: img.scene_id.clone(),
                target,
                pre_quality: pred.pre_quality,
                prediction: pred.final_score,
                class_probs: pred.class_probs,
            })
        })
        .collect()
}

/// Groups results by scene (first-appearance order), computes per-scene
/// metrics and argmax histograms against the training registry.
pub fn evaluate_results(
    model: &str,
    attribute: Attribute,
    results: &[ImageResult],
    registry: &SceneRegistry,
) -> Result<Evaluation> {
    let mut scenes: Vec<(&str, Vec<&ImageResult>)> = Vec::new();
    for r in results {
        match scenes.iter_mut().find(|(s, _)| *s == r.scene_id) {
            Some((_, v)) => v.push(r),
            None => scenes.push((&r.scene_id, vec![r])),
        }
    }

    let mut records = Vec::new();
    let mut excluded = Vec::new();
    let mut histograms = Vec::new();
    for (scene, items) in scenes {
        let preds: Vec<f64> = items.iter().map(|r| r.prediction).collect();
        let targets: Vec<f64> = items.iter().map(|r| r.target).collect();
        match compute_scene_metrics(&preds, &targets) {
            Ok(m) => records.push(MetricRecord::new(model, scene, attribute, items.len(), m)),
            Err(Error::MetricUndefined(reason)) => {
                log::warn!("scene {scene} excluded: {reason}");
                excluded.push((scene.to_string(), reason));
            }
            Err(e) => return Err(e),
        }
        let probs: Vec<ClassProbVector> = items.iter().map(|r| r.class_probs.clone()).collect();
        histograms.push(SceneHistogram {
            scene_id: scene.to_string(),
            counts: class_distribution_histogram(&probs, registry)?,
        });
    }
    Ok(Evaluation {
        records,
        excluded,
        histograms,
    })
}
