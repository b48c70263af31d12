//! The epoch loop.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::loss::{head_loss_and_grad, LossBreakdown};
use super::optim::Adam;
use super::schedule::{early_stop_update, lr_at_epoch, EpochRecord, TrainState};
use crate::dataset::{load_rgb, sample_patches, write_split, AnnotatedImage, Manifest, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_results, median_across_scenes, predict_images};
use crate::network::{load_checkpoint, save_checkpoint, CheckpointExtras, Model, ModelConfig, ParamGroup};
use crate::scene::{SceneAffineTable, SceneRegistry};
use crate::util::{fnv1a64, mix_seed, seeded_rng};

pub const METRICS_HEADER: &str = "epoch,train_loss,huber,ce,val_median_srcc,lr_backbone,lr_heads";

const VAL_STREAM: u64 = 0x7a11d;
const CROP_STREAM: u64 = 0xc409;
const SHUFFLE_STREAM: u64 = 0x5f1e;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    /// Epoch stored in `best_checkpoint`; later than `state.best_epoch`
    /// when subsequent epochs tied the best score.
    pub best_checkpoint_epoch: Option<usize>,
    pub last_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub state: TrainState,
    /// Whether the loop ended through early stopping.
    pub stopped_early: bool,
}

/// Seeded, scene-stratified hold-out: returns `(fit, validation)` indices
/// into `images`. Scenes with at least four images give at least two.
pub fn validation_split(images: &[&AnnotatedImage], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut scenes: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, img) in images.iter().enumerate() {
        match scenes.iter_mut().find(|(s, _)| *s == img.scene_id) {
            Some((_, v)) => v.push(i),
            None => scenes.push((&img.scene_id, vec![i])),
        }
    }
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (scene, mut idx) in scenes {
        let n = idx.len();
        let want = (n as f64 * fraction).round() as usize;
        let n_val = if n >= 4 { want.clamp(2, n - 2) } else { 0 };
        idx.shuffle(&mut seeded_rng(&[seed, VAL_STREAM, fnv1a64(scene.as_bytes())]));
        val.extend_from_slice(&idx[..n_val]);
        fit.extend_from_slice(&idx[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

fn render_metrics(history: &[EpochRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:e},{:e}",
            r.epoch, r.loss.total, r.loss.huber, r.loss.ce, r.val_median_srcc, r.lr_backbone, r.lr_heads
        );
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct Prepared<'a> {
    fit: Vec<(&'a AnnotatedImage, usize)>,
    val: Vec<&'a AnnotatedImage>,
    registry: SceneRegistry,
}

fn prepare<'a>(manifest: &'a Manifest, split: &SplitSpec, config: &TrainConfig) -> Result<Prepared<'a>> {
    for scene in split.train_scenes.iter().chain(&split.test_scenes) {
        if manifest.registry.index_of(scene).is_none() {
            return Err(Error::Invalid(format!("split scene {scene:?} is not in the manifest")));
        }
    }
    let images: Vec<&AnnotatedImage> = manifest
        .images
        .iter()
        .filter(|img| split.is_train(&img.scene_id) && img.score(config.attribute).is_some())
        .collect();
    if images.is_empty() {
        return Err(Error::Degenerate(format!(
            "training side of the split has no images scored for {}",
            config.attribute
        )));
    }
    let mut scenes: Vec<String> = Vec::new();
    for img in &images {
        if !scenes.contains(&img.scene_id) {
            scenes.push(img.scene_id.clone());
        }
    }
    let registry = SceneRegistry::new(scenes)?;
    let (fit_idx, val_idx) = validation_split(&images, config.val_fraction, config.seed);
    if val_idx.is_empty() {
        return Err(Error::Degenerate(
            "no validation images; every training scene needs at least 4 images".into(),
        ));
    }
    let fit = fit_idx
        .into_iter()
        .map(|i| (images[i], registry.index_of(&images[i].scene_id).expect("registered")))
        .collect();
    let val = val_idx.into_iter().map(|i| images[i]).collect();
    Ok(Prepared { fit, val, registry })
}

fn image_gradient(
    model: &Model,
    table: &SceneAffineTable,
    manifest: &Manifest,
    image: &AnnotatedImage,
    scene: usize,
    patch_seed: u64,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Vec<f32>)> {
    let raster = load_rgb(&manifest.resolve(image))?;
    let roi = if config.attribute.uses_face_region() { image.face_region } else { None };
    let patches: Vec<_> = sample_patches(&raster, &model.patch_config(patch_seed), roi, &image.image_path)?
        .into_iter()
        .map(|p| p.raster)
        .collect();
    let fwd = model.forward_train(&patches)?;
    let target = image.score(config.attribute).expect("filtered on score");
    let head = head_loss_and_grad(fwd.pre_quality, &fwd.logits, table, model.config().top_k, target, scene, config)?;
    if !head.loss.total.is_finite() {
        return Err(Error::NonFinite(format!("training loss on {}", image.image_path)));
    }
    let mut grad = vec![0.0f32; model.params().len()];
    model.backward(&fwd, head.d_pre_quality, &head.d_logits, &mut grad);
    let (ra, rb) = model.rescale_ranges();
    for (g, d) in grad[ra].iter_mut().zip(&head.d_multipliers) {
        *g += *d as f32;
    }
    for (g, d) in grad[rb].iter_mut().zip(&head.d_offsets) {
        *g += *d as f32;
    }
    Ok((head.loss, grad))
}

/// Median per-scene validation SRCC; `-1` when no scene has a defined SRCC.
fn validate(model: &Model, manifest: &Manifest, val: &[&AnnotatedImage], registry: &SceneRegistry, config: &TrainConfig) -> Result<f64> {
    let results = predict_images(model, manifest, val, config.attribute, mix_seed(&[config.seed, VAL_STREAM]))?;
    let ev = evaluate_results("validation", config.attribute, &results, registry)?;
    let srcc: Vec<f64> = ev.records.iter().map(|r| r.srcc).collect();
    if srcc.is_empty() {
        log::warn!("no validation scene has a defined SRCC");
        return Ok(-1.0);
    }
    median_across_scenes(&srcc)
}

fn dump_failure(out_dir: &Path, state: &TrainState, err: &Error) -> Error {
    let path = out_dir.join("failure_state.json");
    match serde_json::to_string_pretty(state) {
        Ok(json) => {
            if let Err(e) = fs::write(&path, json) {
                log::error!("could not write {}: {e}", path.display());
            } else {
                log::error!("training state written to {}", path.display());
            }
        }
        Err(e) => log::error!("could not serialize training state: {e}"),
    }
    Error::NonFinite(format!("{err}; state dumped to {}", path.display()))
}

/// Trains on the split's training scenes, writing `best.ckpt`,
/// `last.ckpt`, `metrics.csv` and `split.txt` into `out_dir`. `best.ckpt`
/// holds the latest epoch whose validation score ties or beats the best so
/// far. With `resume`, continues from a checkpoint written by an earlier run.
pub fn run_training(
    manifest: &Manifest,
    split: &SplitSpec,
    model_config: &ModelConfig,
    config: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    for (name, lr) in config.unusual_learning_rates() {
        log::info!("{name} = {lr:e} lies outside the reference range [1e-6, 1e-4]");
    }
    let data = prepare(manifest, split, config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;

    let (mut model, mut state, mut adam) = match resume {
        Some(path) => {
            let (model, extras) = load_checkpoint(path)?;
            if model.registry() != &data.registry {
                return Err(Error::Checkpoint(format!(
                    "checkpoint scenes {:?} differ from the split's training scenes {:?}",
                    model.registry().ids(),
                    data.registry.ids()
                )));
            }
            let state: TrainState = match extras.train_state {
                Some(v) => serde_json::from_value(v).map_err(|e| Error::Checkpoint(format!("training state: {e}")))?,
                None => return Err(Error::Checkpoint("checkpoint carries no training state".into())),
            };
            let groups = model.params().group_of_each();
            let adam = match extras.optimizer {
                Some(o) => Adam::from_state(groups, o).ok_or_else(|| Error::Checkpoint("optimizer state size".into()))?,
                None => Adam::new(groups),
            };
            log::info!("resuming at epoch {}", state.epoch);
            (model, state, adam)
        }
        None => {
            let model = Model::new(model_config.clone(), data.registry.clone(), config.seed)?;
            let adam = Adam::new(model.params().group_of_each());
            (model, TrainState::new(config.seed), adam)
        }
    };

    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");
    let metrics_path = out_dir.join("metrics.csv");
    write_split(out_dir.join("split.txt"), split)?;
    log::info!(
        "training on {} images ({} validation) from {} scenes, {} parameters",
        data.fit.len(),
        data.val.len(),
        data.registry.count(),
        model.params().len()
    );

    let mut stopped_early = false;
    let mut best_checkpoint_epoch = None;
    while state.epoch < config.max_epochs {
        let epoch = state.epoch;
        let lr_b = lr_at_epoch(config.lr_backbone, epoch, config);
        let lr_h = lr_at_epoch(config.lr_heads, epoch, config);
        let lr_r = lr_at_epoch(config.rescale_lr(), epoch, config);
        let mut order: Vec<usize> = (0..data.fit.len()).collect();
        order.shuffle(&mut seeded_rng(&[state.rng_seed, SHUFFLE_STREAM, epoch as u64]));
        let patch_seed = mix_seed(&[state.rng_seed, CROP_STREAM, epoch as u64]);

        let mut sum = LossBreakdown::default();
        for batch in order.chunks(config.batch_size) {
            let table = model.affine_table();
            let results: Result<Vec<_>> = batch
                .par_iter()
                .map(|&i| {
                    let (img, scene) = data.fit[i];
                    image_gradient(&model, &table, manifest, img, scene, patch_seed, config)
                })
                .collect();
            let results = match results {
                Ok(r) => r,
                Err(e @ Error::NonFinite(_)) => return Err(dump_failure(out_dir, &state, &e)),
                Err(e) => return Err(e),
            };
            let mut grad = vec![0.0f32; model.params().len()];
            let scale = 1.0 / batch.len() as f32;
            for (loss, g) in &results {
                sum.total += loss.total;
                sum.huber += loss.huber;
                sum.ce += loss.ce;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v * scale;
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                let e = Error::NonFinite(format!("gradient at epoch {epoch}"));
                return Err(dump_failure(out_dir, &state, &e));
            }
            adam.step(model.params_mut().values_mut(), &grad, |g| match g {
                ParamGroup::Backbone => lr_b,
                ParamGroup::Heads => lr_h,
                ParamGroup::Rescale => lr_r,
            });
            if model.params().values().iter().any(|v| !v.is_finite()) {
                let e = Error::NonFinite(format!("parameters after a step at epoch {epoch}"));
                return Err(dump_failure(out_dir, &state, &e));
            }
        }
        let n = data.fit.len() as f64;
        let loss = LossBreakdown {
            total: sum.total / n,
            huber: sum.huber / n,
            ce: sum.ce / n,
        };

        let val_srcc = validate(&model, manifest, &data.val, &data.registry, config)?;
        state.history.push(EpochRecord {
            epoch,
            loss,
            val_median_srcc: val_srcc,
            lr_backbone: lr_b,
            lr_heads: lr_h,
        });
        let save_best = state.best_val_srcc.is_none_or(|best| val_srcc >= best);
        let (next, stop) = early_stop_update(state, val_srcc, config.patience);
        state = next;
        log::info!(
            "epoch {epoch}: loss {:.4} (huber {:.4}, ce {:.4}), val median SRCC {val_srcc:.4}",
            loss.total,
            loss.huber,
            loss.ce
        );
        state.epoch += 1;

        write_file(&metrics_path, &render_metrics(&state.history))?;
        let mut extras = CheckpointExtras {
            epoch: state.epoch,
            attribute: Some(config.attribute),
            train_state: Some(serde_json::to_value(&state)?),
            optimizer: None,
        };
        if save_best {
            save_checkpoint(&best_path, &model, &extras)?;
            best_checkpoint_epoch = Some(epoch);
        }
        extras.optimizer = Some(adam.state().clone());
        save_checkpoint(&last_path, &model, &extras)?;

        if stop {
            log::info!("early stop after epoch {epoch}: no improvement for {} epochs", config.patience);
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        best_checkpoint: best_path,
        best_checkpoint_epoch,
        last_checkpoint: last_path,
        metrics_path,
        state,
        stopped_early,
    })
}
