//! Synthetic scenes with a known quality law.
//!
//! Scenes differ only in base hue; brightness and the stripe texture
//! (amplitude, period, orientation) are shared by all scenes. Every image
//! carries a latent quality in `[0, 1]` realised as Gaussian blur
//! (`sigma = MAX_BLUR_SIGMA * (1 - latent)`), and its annotated score is the
//! scene's affine map of that latent. A model that recovers the latent and
//! the per-scene affines reproduces the scores exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;

use super::manifest::{write_manifest, AnnotatedImage, Attribute, Lighting};
use crate::error::{Error, Result};
use crate::scene::SceneAffineTable;
use crate::util::seeded_rng;

pub const MAX_BLUR_SIGMA: f32 = 2.5;
const STRIPE_PERIOD: f32 = 12.0;
const STRIPE_ANGLE: f32 = std::f32::consts::FRAC_PI_4;
const TEXTURE_AMPLITUDE: f32 = 0.35;
const LIGHTING_CYCLE: [Lighting; 4] = [
    Lighting::Outdoor,
    Lighting::Indoor,
    Lighting::Lowlight,
    Lighting::Night,
];

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub n_scenes: usize,
    pub images_per_scene: usize,
    pub affine_truth: SceneAffineTable,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub image_size: u32,
}

impl SynthOptions {
    pub fn new(n_scenes: usize, images_per_scene: usize, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            n_scenes,
            images_per_scene,
            affine_truth: default_affine_truth(n_scenes),
            seed,
            out_dir: out_dir.into(),
            image_size: 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub manifest_path: PathBuf,
    pub truth_path: PathBuf,
    pub rows: usize,
}

/// Spread of multipliers in `[1, 3]` and offsets in `[-1, 1]`, fixed per
/// scene index.
pub fn default_affine_truth(n_scenes: usize) -> SceneAffineTable {
    let frac = |v: f64| v - v.floor();
    let a = (0..n_scenes).map(|i| 1.0 + 2.0 * frac(0.5 + i as f64 * 0.618_034)).collect();
    let b = (0..n_scenes).map(|i| -1.0 + 2.0 * frac(0.25 + i as f64 * 0.414_214)).collect();
    SceneAffineTable::new(a, b).expect("finite by construction")
}

pub fn synthetic_score(multiplier: f64, offset: f64, latent: f64) -> f64 {
    multiplier * latent + offset
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:02}")
}

struct SceneStyle {
    base: [f32; 3],
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn scene_style(seed: u64, scene: usize, n_scenes: usize) -> SceneStyle {
    let mut rng = seeded_rng(&[seed, 0x5ce7e, scene as u64]);
    let hue = 360.0 * scene as f32 / n_scenes as f32 + rng.random_range(-8.0..8.0);
    SceneStyle {
        base: hsv(hue, 0.45, 0.6),
    }
}

/// Achromatic stripes plus grain of fixed amplitude over the scene's base
/// colour, then blurred. Only the blur depends on the latent quality.
fn render_image(style: &SceneStyle, size: u32, latent: f64, seed: u64, scene: usize, index: usize) -> RgbImage {
    let mut rng = seeded_rng(&[seed, 0x1a6e, scene as u64, index as u64]);
    let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let angle = STRIPE_ANGLE + rng.random_range(-0.15..0.15);
    let (sin, cos) = angle.sin_cos();
    let omega = std::f32::consts::TAU / STRIPE_PERIOD;

    let mut img = RgbImage::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let u = x as f32 * cos + y as f32 * sin;
        let grain: f32 = rng.random_range(-0.5..0.5);
        let t = 0.5 * (omega * u + phase).sin() + 0.5 * grain;
        let mut c = [0u8; 3];
        for ch in 0..3 {
            let v = style.base[ch] + TEXTURE_AMPLITUDE * t;
            c[ch] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(c);
    }
    let sigma = MAX_BLUR_SIGMA * (1.0 - latent as f32);
    if sigma > 0.05 {
        img = imageops::blur(&img, sigma);
    }
    img
}

pub fn generate_synthetic_dataset(options: &SynthOptions) -> Result<SynthSummary> {
    let SynthOptions {
        n_scenes,
        images_per_scene,
        ref affine_truth,
        seed,
        ref out_dir,
        image_size,
    } = *options;
    if n_scenes < 2 || images_per_scene < 4 {
        return Err(Error::Invalid(format!(
            "need at least 2 scenes and 4 images per scene, got {n_scenes} x {images_per_scene}"
        )));
    }
    if affine_truth.len() != n_scenes {
        return Err(Error::Shape(format!(
            "affine truth has {} scenes, dataset {n_scenes}",
            affine_truth.len()
        )));
    }
    if image_size < 16 {
        return Err(Error::Invalid("image size must be at least 16".into()));
    }

    let image_dir = out_dir.join("images");
    for s in 0..n_scenes {
        let dir = image_dir.join(scene_id(s));
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }

    struct Item {
        scene: usize,
        index: usize,
        latent: f64,
    }
    let mut items = Vec::with_capacity(n_scenes * images_per_scene);
    for s in 0..n_scenes {
        let mut rng = seeded_rng(&[seed, 0x1a7e, s as u64]);
        for i in 0..images_per_scene {
            items.push(Item {
                scene: s,
                index: i,
                latent: rng.random_range(0.0..=1.0),
            });
        }
    }

    let styles: Vec<SceneStyle> = (0..n_scenes).map(|s| scene_style(seed, s, n_scenes)).collect();
    items.par_iter().try_for_each(|it| -> Result<()> {
        let img = render_image(&styles[it.scene], image_size, it.latent, seed, it.scene, it.index);
        let path = image_dir.join(scene_id(it.scene)).join(format!("img_{:03}.png", it.index));
        img.save(&path)?;
        Ok(())
    })?;

    let mut records = Vec::with_capacity(items.len());
    let mut truth = String::from("image_path,scene_id,latent,score\n");
    for it in &items {
        let (a, b) = affine_truth.pair(it.scene)?;
        let score = synthetic_score(a, b, it.latent);
        let rel = format!("images/{}/img_{:03}.png", scene_id(it.scene), it.index);
        let _ = writeln!(truth, "{rel},{},{},{}", scene_id(it.scene), it.latent, score);
        records.push(AnnotatedImage {
            image_path: rel,
            scene_id: scene_id(it.scene),
            lighting: LIGHTING_CYCLE[it.scene % LIGHTING_CYCLE.len()].clone(),
            scores: BTreeMap::from([(Attribute::Overall, score)]),
            face_region: None,
        });
    }

    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &records)?;
    let truth_path = out_dir.join("truth.csv");
    let mut affine = String::from("scene_id,multiplier,offset\n");
    for s in 0..n_scenes {
        let (a, b) = affine_truth.pair(s)?;
        let _ = writeln!(affine, "{},{a},{b}", scene_id(s));
    }
    write_text(&truth_path, &truth)?;
    write_text(&out_dir.join("affine_truth.csv"), &affine)?;

    Ok(SynthSummary {
        manifest_path,
        truth_path,
        rows: records.len(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
