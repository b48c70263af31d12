//! Seeded random square crops.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::FaceRegion;
use crate::error::{Error, Result};
use crate::util::{fnv1a64, seeded_rng};

/// Patch side and the number of crops taken per image at that side.
pub const PATCH_SCHEDULE: [(u32, usize); 3] = [(224, 5), (672, 3), (1344, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_size: u32,
    pub patches_per_image: usize,
    pub seed: u64,
}

impl PatchConfig {
    /// Uses the count paired with `patch_size` in [`PATCH_SCHEDULE`].
    pub fn standard(patch_size: u32, seed: u64) -> Result<Self> {
        let (_, count) = PATCH_SCHEDULE
            .iter()
            .find(|(s, _)| *s == patch_size)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "patch size {patch_size} has no standard count; use PatchConfig::custom"
                ))
            })?;
        Ok(Self {
            patch_size,
            patches_per_image: *count,
            seed,
        })
    }

    /// Explicit override of the size/count pairing.
    pub fn custom(patch_size: u32, patches_per_image: usize, seed: u64) -> Result<Self> {
        if patch_size == 0 || patches_per_image == 0 {
            return Err(Error::Invalid("patch size and count must be positive".into()));
        }
        Ok(Self {
            patch_size,
            patches_per_image,
            seed,
        })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct Patch {
    /// Top-left corner in the (restricted, possibly upscaled) frame.
    pub x: u32,
    pub y: u32,
    pub raster: RgbImage,
}

/// Decodes any supported image file to 8-bit RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| Error::ImageFile {
            path: path.to_path_buf(),
            source,
        })
}

/// Restricts `image` to `roi` and upscales it (bilinear, aspect preserved)
/// when either side is shorter than `min_side`.
pub fn prepare_region(image: &RgbImage, roi: Option<FaceRegion>, min_side: u32) -> Result<RgbImage> {
    let region = match roi {
        Some(r) => {
            if !r.fits_within(image.width(), image.height()) {
                return Err(Error::Shape(format!(
                    "region {r:?} outside {}x{} image",
                    image.width(),
                    image.height()
                )));
            }
            imageops::crop_imm(image, r.x, r.y, r.width, r.height).to_image()
        }
        None => image.clone(),
    };
    let (w, h) = region.dimensions();
    if w >= min_side && h >= min_side {
        return Ok(region);
    }
    let scale = f64::from(min_side) / f64::from(w.min(h));
    let nw = ((f64::from(w) * scale).ceil() as u32).max(min_side);
    let nh = ((f64::from(h) * scale).ceil() as u32).max(min_side);
    log::warn!("upscaling {w}x{h} region to {nw}x{nh} for {min_side}px patches");
    Ok(imageops::resize(&region, nw, nh, FilterType::Triangle))
}

/// Top-left corners drawn uniformly over valid positions in a
/// `width x height` frame. Deterministic in `(config, identity)`.
pub fn patch_positions(width: u32, height: u32, config: &PatchConfig, identity: &str) -> Vec<(u32, u32)> {
    let mut rng = seeded_rng(&[config.seed, fnv1a64(identity.as_bytes()), u64::from(config.patch_size)]);
    let max_x = width.saturating_sub(config.patch_size);
    let max_y = height.saturating_sub(config.patch_size);
    (0..config.patches_per_image)
        .map(|_| (rng.random_range(0..=max_x), rng.random_range(0..=max_y)))
        .collect()
}

/// `identity` names the image (usually its manifest path) so every image
/// gets its own crop stream regardless of loading order.
pub fn sample_patches(
    image: &RgbImage,
    config: &PatchConfig,
    roi: Option<FaceRegion>,
    identity: &str,
) -> Result<Vec<Patch>> {
    let region = prepare_region(image, roi, config.patch_size)?;
    let side = config.patch_size;
    Ok(patch_positions(region.width(), region.height(), config, identity)
        .into_iter()
        .map(|(x, y)| Patch {
            x,
            y,
            raster: imageops::crop_imm(&region, x, y, side, side).to_image(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn standard_counts() {
        assert_eq!(PatchConfig::standard(224, 0).unwrap().patches_per_image, 5);
        assert_eq!(PatchConfig::standard(672, 0).unwrap().patches_per_image, 3);
        assert_eq!(PatchConfig::standard(1344, 0).unwrap().patches_per_image, 1);
        assert!(PatchConfig::standard(300, 0).is_err());
        assert_eq!(PatchConfig::custom(32, 2, 0).unwrap().patches_per_image, 2);
    }

    #[test]
    fn exact_size_gives_full_frame_crops() {
        let img = gradient(224, 224);
        let cfg = PatchConfig::standard(224, 7).unwrap();
        let patches = sample_patches(&img, &cfg, None, "a.png").unwrap();
        assert_eq!(patches.len(), 5);
        for p in patches {
            assert_eq!((p.x, p.y), (0, 0));
            assert_eq!(p.raster, img);
        }
    }

    #[test]
    fn same_seed_same_positions() {
        let cfg = PatchConfig::standard(224, 3).unwrap();
        let a = patch_positions(640, 480, &cfg, "x.png");
        assert_eq!(a, patch_positions(640, 480, &cfg, "x.png"));
        assert_ne!(a, patch_positions(640, 480, &cfg.with_seed(4), "x.png"));
        assert_ne!(a, patch_positions(640, 480, &cfg, "y.png"));
    }

    #[test]
    fn undersized_image_is_upscaled() {
        let img = gradient(100, 150);
        let cfg = PatchConfig::custom(224, 2, 1).unwrap();
        let patches = sample_patches(&img, &cfg, None, "small").unwrap();
        assert_eq!(patches.len(), 2);
        for p in &patches {
            assert_eq!(p.raster.dimensions(), (224, 224));
            assert_eq!(p.x, 0);
            assert!(p.y <= 336 - 224);
        }
    }

    #[test]
    fn roi_restricts_crops() {
        let mut img = RgbImage::new(300, 300);
        for y in 50..150 {
            for x in 60..160 {
                img.put_pixel(x, y, Rgb([255, 255, 255]));
            }
        }
        let roi = FaceRegion { x: 60, y: 50, width: 100, height: 100 };
        let cfg = PatchConfig::custom(32, 4, 9).unwrap();
        for p in sample_patches(&img, &cfg, Some(roi), "face").unwrap() {
            assert!(p.raster.pixels().all(|px| px.0 == [255, 255, 255]));
        }
        let outside = FaceRegion { x: 250, y: 0, width: 100, height: 10 };
        assert!(sample_patches(&img, &cfg, Some(outside), "face").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn crops_stay_inside(w in 1u32..2000, h in 1u32..2000, side in 1u32..400, n in 1usize..6, seed: u64) {
            let cfg = PatchConfig::custom(side, n, seed).unwrap();
            let (fw, fh) = (w.max(side), h.max(side));
            for (x, y) in patch_positions(fw, fh, &cfg, "img") {
                prop_assert!(x + side <= fw && y + side <= fh);
            }
        }
    }
}
