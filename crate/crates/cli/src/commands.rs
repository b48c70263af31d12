use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use fhiqa_core::dataset::{
    piq23, generate_scene_split_with, generate_synthetic_dataset, load_manifest, load_rgb, read_split, split_report,
    write_split, Manifest, SplitOptions, SplitSpec, SynthOptions,
};
use fhiqa_core::evaluation::{
    build_benchmark_table, evaluate_results, median_with, predict_images, read_metric_records, write_averaged_csv,
    write_histogram_csv, write_metric_records, ImageResult,
};
use fhiqa_core::network::{load_checkpoint, CheckpointExtras, Model};
use fhiqa_core::scene::top_k_select;
use fhiqa_core::training::run_training;
use fhiqa_core::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Cli, Command, EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_SPLIT, EXIT_TRAINING};

/// Maps a failure to the documented process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Constraint(_) => EXIT_SPLIT,
                Error::NonFinite(_) => EXIT_TRAINING,
                Error::Checkpoint(_) => EXIT_CHECKPOINT,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("worker pool already initialised: {e}");
        }
    }
    let mut overrides = cli.overrides.clone();
    if let Some(dir) = &cli.output_dir {
        overrides.push(format!("output_dir={}", toml_string(dir)));
    }
    if let Some(seed) = cli.seed {
        overrides.push(format!("run_seed={seed}"));
    }
    let path_flag = |overrides: &mut Vec<String>, key: &str, p: &Option<PathBuf>| {
        if let Some(p) = p {
            overrides.push(format!("{key}={}", toml_string(p)));
        }
    };
    match &cli.command {
        Command::Synth { scenes, images_per_scene, .. } => {
            if let Some(n) = scenes {
                overrides.push(format!("dataset.synth_scenes={n}"));
            }
            if let Some(n) = images_per_scene {
                overrides.push(format!("dataset.synth_images_per_scene={n}"));
            }
        }
        Command::Split { manifest, n_test, fraction, tolerance, .. } => {
            path_flag(&mut overrides, "dataset.manifest", manifest);
            if let Some(n) = n_test {
                overrides.push(format!("dataset.n_test_scenes={n}"));
            }
            if let Some(f) = fraction {
                overrides.push(format!("dataset.target_fraction={f:?}"));
            }
            if let Some(t) = tolerance {
                overrides.push(format!("dataset.fraction_tolerance={t:?}"));
            }
        }
        Command::Train { manifest, split, epochs, .. } => {
            path_flag(&mut overrides, "dataset.manifest", manifest);
            path_flag(&mut overrides, "dataset.split", split);
            if let Some(n) = epochs {
                overrides.push(format!("train.max_epochs={n}"));
            }
        }
        Command::Eval { manifest, split, attribute, .. } => {
            path_flag(&mut overrides, "dataset.manifest", manifest);
            path_flag(&mut overrides, "dataset.split", split);
            if let Some(a) = attribute {
                overrides.push(format!("eval.attribute=\"{a}\""));
            }
        }
        Command::Infer { .. } | Command::Report { .. } | Command::Config => {}
    }
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;

    match cli.command {
        Command::Synth { out, .. } => cmd_synth(&config, out),
        Command::Split { out, .. } => cmd_split(&config, out),
        Command::Train { resume, .. } => cmd_train(&config, resume.as_deref()),
        Command::Eval { checkpoint, out, .. } => cmd_eval(&config, &checkpoint, out),
        Command::Infer { checkpoint, input, out } => cmd_infer(&config, &checkpoint, &input, out.as_deref()),
        Command::Report { metrics, models, out } => cmd_report(&config, &metrics, models, out),
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn toml_string(p: &Path) -> String {
    toml::Value::String(p.to_string_lossy().into_owned()).to_string()
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> anyhow::Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| anyhow!("{key} is not set; pass it in the configuration or as a flag"))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn cmd_synth(config: &RunConfig, out: Option<PathBuf>) -> anyhow::Result<()> {
    let out = out.unwrap_or_else(|| config.resolved_output_dir().join("synth"));
    let d = &config.dataset;
    let mut options = SynthOptions::new(d.synth_scenes, d.synth_images_per_scene, config.run_seed, &out);
    options.image_size = d.synth_image_size;
    let summary = generate_synthetic_dataset(&options)?;
    println!(
        "wrote {} images over {} scenes; manifest {}, ground truth {}",
        summary.rows,
        d.synth_scenes,
        summary.manifest_path.display(),
        summary.truth_path.display()
    );
    Ok(())
}

pub fn cmd_split(config: &RunConfig, out: Option<PathBuf>) -> anyhow::Result<()> {
    let d = &config.dataset;
    let manifest = open_manifest(required(&d.manifest, "dataset.manifest")?)?;
    if d.n_test_scenes == 0 {
        log::warn!("n_test_scenes is 0: every scene goes to the training side");
        println!("warning: n_test_scenes is 0, the test side is empty");
    }
    let options = SplitOptions {
        max_attempts: d.max_attempts,
        lighting_tolerance: d.lighting_tolerance,
    };
    let split = generate_scene_split_with(
        &manifest.images,
        d.n_test_scenes,
        d.target_fraction,
        d.fraction_tolerance,
        config.run_seed,
        &options,
    )?;
    let out = out.unwrap_or_else(|| config.resolved_output_dir().join("split.txt"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_split(&out, &split)?;
    print!("{}", split_report(&manifest.images, &split).render());
    println!("split written to {}", out.display());
    Ok(())
}

/// Reads a manifest in the native layout or a PIQ23 score file.
fn open_manifest(path: &Path) -> anyhow::Result<Manifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<&str> = text.lines().next().unwrap_or_default().split(',').collect();
    if piq23::is_piq23_header(&header) {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        return Ok(piq23::load_piq23(&[path.to_path_buf()], root)?);
    }
    Ok(load_manifest(path)?)
}

fn load_data(config: &RunConfig) -> anyhow::Result<(Manifest, SplitSpec)> {
    let manifest = open_manifest(required(&config.dataset.manifest, "dataset.manifest")?)?;
    let split = read_split(required(&config.dataset.split, "dataset.split")?)?;
    Ok((manifest, split))
}

pub fn cmd_train(config: &RunConfig, resume: Option<&Path>) -> anyhow::Result<()> {
    let (manifest, split) = load_data(config)?;
    let out = config.resolved_output_dir().join("train");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), config.to_toml()).context("writing config.toml")?;
    let outcome = run_training(&manifest, &split, &config.model, &config.train, &out, resume)?;
    let s = &outcome.state;
    match (s.best_epoch, s.best_val_srcc) {
        (Some(e), Some(v)) => println!("best epoch {e}, validation median SRCC {v:.4}"),
        _ => println!("no epoch was run"),
    }
    if let Some(e) = outcome.best_checkpoint_epoch.filter(|e| Some(*e) != s.best_epoch) {
        println!("best.ckpt holds epoch {e}, the last to match that score");
    }
    if outcome.stopped_early {
        println!("stopped early after {} epochs", s.epoch);
    }
    println!(
        "checkpoints {} and {}, metrics {}",
        outcome.best_checkpoint.display(),
        outcome.last_checkpoint.display(),
        outcome.metrics_path.display()
    );
    Ok(())
}

fn checkpoint_error(message: String) -> anyhow::Error {
    Error::Checkpoint(message).into()
}

fn load_model(path: &Path) -> anyhow::Result<(Model, CheckpointExtras)> {
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

fn render_predictions(results: &[ImageResult]) -> String {
    let mut out = String::from("image_path,scene,target,pre_quality,prediction\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            r.image_path, r.scene_id, r.target, r.pre_quality, r.prediction
        );
    }
    out
}

pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let (manifest, split) = load_data(config)?;
    let (model, extras) = load_model(checkpoint)?;
    let attribute = match (config.eval.attribute, extras.attribute) {
        (Some(asked), Some(trained)) if asked != trained => {
            return Err(checkpoint_error(format!(
                "checkpoint was trained on {trained}, evaluation asks for {asked}"
            )))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => fhiqa_core::dataset::Attribute::Overall,
    };
    if let Some(leak) = split.test_scenes.iter().find(|s| model.registry().index_of(s).is_some()) {
        return Err(checkpoint_error(format!(
            "test scene {leak} was a training scene of the checkpoint"
        )));
    }
    let images: Vec<_> = manifest
        .images
        .iter()
        .filter(|i| split.is_test(&i.scene_id) && i.score(attribute).is_some())
        .collect();
    if images.is_empty() {
        bail!("the test side of the split has no images scored for {attribute}");
    }
    let results = predict_images(&model, &manifest, &images, attribute, config.eval.patch_seed)?;
    let name = &config.eval.model_name;
    let ev = evaluate_results(name, attribute, &results, model.registry())?;
    if ev.records.is_empty() {
        bail!("no test scene has defined metrics");
    }

    let out = out.unwrap_or_else(|| config.resolved_output_dir().join("eval"));
    create_dir(&out)?;
    fs::write(out.join("predictions.csv"), render_predictions(&results)).context("writing predictions.csv")?;
    write_metric_records(out.join("metrics.csv"), &ev.records)?;
    write_averaged_csv(out.join("averaged.csv"), &ev.records)?;
    write_histogram_csv(out.join("histograms.csv"), &ev.histograms, model.registry().ids())?;
    let table = build_benchmark_table(&ev.records, std::slice::from_ref(name), config.eval.median_rule);
    fs::write(out.join("table.csv"), table.to_csv()).context("writing table.csv")?;
    fs::write(out.join("table.txt"), table.to_text()).context("writing table.txt")?;

    let rule = config.eval.median_rule;
    let column = |f: fn(&fhiqa_core::evaluation::MetricRecord) -> f64| -> anyhow::Result<f64> {
        Ok(median_with(&ev.records.iter().map(f).collect::<Vec<_>>(), rule)?)
    };
    println!(
        "{attribute}: {} scenes, median SRCC {:.4} PLCC {:.4} KRCC {:.4} MAE {:.4}",
        ev.records.len(),
        column(|r| r.srcc)?,
        column(|r| r.plcc)?,
        column(|r| r.krcc)?,
        column(|r| r.mae)?
    );
    for (scene, reason) in &ev.excluded {
        println!("excluded {scene}: {reason}");
    }
    print!("{}", table.to_text());
    println!("results written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct SceneWeight<'a> {
    scene: &'a str,
    weight: f64,
}

#[derive(Serialize)]
struct InferLine<'a> {
    image: String,
    pre_quality: f64,
    final_score: f64,
    top_k: Vec<SceneWeight<'a>>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn list_images(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(input).with_context(|| format!("listing {}", input.display()))? {
        let path = entry?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no png or jpeg images in {}", input.display());
    }
    Ok(files)
}

pub fn cmd_infer(config: &RunConfig, checkpoint: &Path, input: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let (model, _) = load_model(checkpoint)?;
    let files = list_images(input)?;
    let lines: Vec<String> = files
        .par_iter()
        .map(|path| -> anyhow::Result<String> {
            let raster = load_rgb(path)?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let pred = model.forward_image(&raster, &name, None, config.eval.patch_seed)?;
            let sel = top_k_select(&pred.class_probs, model.config().top_k)?;
            let top_k = sel
                .indices
                .iter()
                .zip(&sel.weights)
                .map(|(&i, &weight)| SceneWeight {
                    scene: model.registry().id(i).expect("index within registry"),
                    weight,
                })
                .collect();
            let line = InferLine {
                image: path.to_string_lossy().into_owned(),
                pre_quality: pred.pre_quality,
                final_score: pred.final_score,
                top_k,
            };
            Ok(serde_json::to_string(&line)?)
        })
        .collect::<anyhow::Result<_>>()?;
    let mut text = lines.join("\n");
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn cmd_report(config: &RunConfig, metrics: &[PathBuf], models: Vec<String>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let mut records = Vec::new();
    for path in metrics {
        records.extend(read_metric_records(path).with_context(|| format!("reading {}", path.display()))?);
    }
    let models = if models.is_empty() {
        let mut seen: Vec<String> = Vec::new();
        for r in &records {
            if !seen.contains(&r.model) {
                seen.push(r.model.clone());
            }
        }
        seen
    } else {
        models
    };
    let table = build_benchmark_table(&records, &models, config.eval.median_rule);
    let out = out.unwrap_or_else(|| config.resolved_output_dir().join("report"));
    create_dir(&out)?;
    fs::write(out.join("table.csv"), table.to_csv()).context("writing table.csv")?;
    fs::write(out.join("table.txt"), table.to_text()).context("writing table.txt")?;
    print!("{}", table.to_text());
    Ok(())
}
