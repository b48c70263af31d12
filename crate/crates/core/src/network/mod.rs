//! Neural components: a toy CNN backbone, the image-level scene classifier,
//! the hypernetwork (or linear-probe) quality head and the per-scene affine
//! rescaling table, wired into the scene-weighted aggregation.

mod backbone;
mod checkpoint;
mod heads;
mod model;
mod ops;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::TopKPolicy;

pub use backbone::{CONTENT_DIM, SEMANTIC_DIM, STAGE_CHANNELS};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointExtras, OptimizerState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use heads::{classifier_hidden, TARGET_WIDTHS};
pub use model::{softmax, FeatureBundle, Model, TrainForward};
pub use params::{ParamGroup, ParamSpec, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    ToyCnn,
    /// Accepted in configuration files; no pretrained weights ship with
    /// this crate, so building it fails.
    Resnet50Pretrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Hypernetwork,
    LinearProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    /// Patch side in pixels; a multiple of 224.
    pub input_size: u32,
    pub patches_per_image: usize,
    /// Set from the training registry when left at 0.
    pub num_scenes: usize,
    pub top_k: TopKPolicy,
    pub hyper_head: HeadKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::ToyCnn,
            input_size: 224,
            patches_per_image: 5,
            num_scenes: 0,
            top_k: TopKPolicy::new(5).expect("positive"),
            hyper_head: HeadKind::Hypernetwork,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 224 != 0 {
            return Err(Error::Invalid(format!(
                "input_size {} is not a positive multiple of 224",
                self.input_size
            )));
        }
        if self.patches_per_image == 0 {
            return Err(Error::Invalid("patches_per_image must be positive".into()));
        }
        if self.backbone == BackboneKind::Resnet50Pretrained {
            return Err(Error::Invalid(
                "backbone resnet50_pretrained needs external pretrained weights, which this build does not support; use toy_cnn".into(),
            ));
        }
        Ok(())
    }
}
