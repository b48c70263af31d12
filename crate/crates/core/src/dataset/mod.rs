//! Annotated manifests, scene-disjoint splits, patch sampling and the
//! synthetic verification dataset.

mod manifest;
mod patches;
pub mod piq23;
mod split;
mod synth;

pub use manifest::{
    load_manifest, write_manifest, AnnotatedImage, Attribute, FaceRegion, Lighting, Manifest,
    MANIFEST_HEADER,
};
pub use patches::{
    load_rgb, patch_positions, prepare_region, sample_patches, Patch, PatchConfig,
    PATCH_SCHEDULE,
};
pub use split::{
    generate_scene_split, generate_scene_split_with, read_split, split_report, write_split,
    LightingBalance, SplitOptions, SplitReport, SplitSpec,
};
pub use synth::{default_affine_truth, generate_synthetic_dataset, SynthOptions, SynthSummary};
