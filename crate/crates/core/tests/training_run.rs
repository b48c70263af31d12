use std::fs;
use std::path::Path;

use fhiqa_core::dataset::{generate_synthetic_dataset, load_manifest, SplitSpec, SynthOptions};
use fhiqa_core::network::{load_checkpoint, ModelConfig};
use fhiqa_core::training::{run_training, TrainConfig, METRICS_HEADER};

fn setup(dir: &Path) -> (fhiqa_core::dataset::Manifest, SplitSpec) {
    let summary = generate_synthetic_dataset(&SynthOptions::new(3, 6, 3, dir.join("data"))).unwrap();
    let manifest = load_manifest(&summary.manifest_path).unwrap();
    let ids = manifest.registry.ids().to_vec();
    let split = SplitSpec {
        train_scenes: ids[..2].to_vec(),
        test_scenes: ids[2..].to_vec(),
        seed: 3,
    };
    (manifest, split)
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        lr_heads: 1e-3,
        lr_backbone: 1e-4,
        batch_size: 4,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn writes_artifacts_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, split) = setup(dir.path());
    let run = dir.path().join("run");
    let out = run_training(&manifest, &split, &ModelConfig::default(), &config(2), &run, None).unwrap();
    assert_eq!(out.state.epoch, 2);
    assert_eq!(out.state.history.len(), 2);
    let metrics = fs::read_to_string(&out.metrics_path).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(metrics.lines().count(), 3);
    assert!(run.join("split.txt").exists());
    assert!(out.best_checkpoint.exists());

    let (model, extras) = load_checkpoint(&out.last_checkpoint).unwrap();
    assert_eq!(model.registry().ids(), &split.train_scenes[..]);
    assert_eq!(extras.epoch, 2);
    assert!(extras.optimizer.is_some());

    let resumed = run_training(&manifest, &split, &ModelConfig::default(), &config(3), &run, Some(&out.last_checkpoint)).unwrap();
    assert_eq!(resumed.state.epoch, 3);
    assert_eq!(resumed.state.history.len(), 3);
    assert_eq!(resumed.state.history[..2], out.state.history[..]);
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, split) = setup(dir.path());
    let a = run_training(&manifest, &split, &ModelConfig::default(), &config(2), &dir.path().join("a"), None).unwrap();
    let b = run_training(&manifest, &split, &ModelConfig::default(), &config(2), &dir.path().join("b"), None).unwrap();
    assert_eq!(fs::read(a.metrics_path).unwrap(), fs::read(b.metrics_path).unwrap());
    assert_eq!(fs::read(a.last_checkpoint).unwrap(), fs::read(b.last_checkpoint).unwrap());
}

#[test]
fn rejects_unknown_split_scene() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, mut split) = setup(dir.path());
    split.test_scenes.push("nowhere".into());
    assert!(run_training(&manifest, &split, &ModelConfig::default(), &config(1), &dir.path().join("r"), None).is_err());
}
