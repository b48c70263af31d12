//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid by
//! command-line overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use fhiqa_core::dataset::Attribute;
use fhiqa_core::evaluation::MedianRule;
use fhiqa_core::network::ModelConfig;
use fhiqa_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Relative `output_dir` values resolve against this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "FHIQA_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub manifest: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub n_test_scenes: usize,
    pub target_fraction: f64,
    pub fraction_tolerance: f64,
    pub max_attempts: usize,
    pub lighting_tolerance: Option<f64>,
    pub synth_scenes: usize,
    pub synth_images_per_scene: usize,
    pub synth_image_size: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            split: None,
            n_test_scenes: 15,
            target_fraction: 0.29,
            fraction_tolerance: 0.03,
            max_attempts: 500,
            lighting_tolerance: None,
            synth_scenes: 7,
            synth_images_per_scene: 40,
            synth_image_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Defaults to the attribute the checkpoint was trained on.
    pub attribute: Option<Attribute>,
    pub model_name: String,
    pub median_rule: MedianRule,
    pub patch_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            attribute: None,
            model_name: "fhiqa".into(),
            median_rule: MedianRule::Standard,
            patch_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds synthesis and splitting, and training unless `train.seed` is set.
    pub run_seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_seed: 0,
            output_dir: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Keys without a default value; they are absent from the serialized
/// defaults.
const OPTIONAL_KEYS: [(&str, &str); 5] = [
    ("dataset.manifest", "path of the manifest CSV"),
    ("dataset.split", "path of the split file"),
    ("dataset.lighting_tolerance", "twice fraction_tolerance"),
    ("train.lr_rescale", "train.lr_heads"),
    ("eval.attribute", "the checkpoint's attribute"),
];

impl RunConfig {
    /// Loads `path` (or the defaults), applies `overrides` of the form
    /// `section.key=value` and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut tree = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>().with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let explicit_train_seed = tree
            .get("train")
            .and_then(Value::as_table)
            .is_some_and(|t| t.contains_key("seed"));
        let mut config: RunConfig = Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| anyhow!("invalid configuration: {}", e.to_string().trim().replace('\n', " ")))?;
        if !explicit_train_seed {
            config.train.seed = config.run_seed;
        }
        config.model.validate()?;
        config.train.validate()?;
        Ok(config)
    }

    /// `output_dir`, placed under `$FHIQA_OUTPUT_ROOT` when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn apply_override(tree: &mut Table, spec: &str) -> anyhow::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?} is not of the form key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    let value = parse_value(raw.trim());
    let mut table = tree;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override key {key:?}: {part} is not a section"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Every configuration key with its default, one per line.
pub fn describe_keys() -> String {
    let mut lines = Vec::new();
    flatten("", &Value::try_from(RunConfig::default()).expect("defaults serialize"), &mut lines);
    for (key, fallback) in OPTIONAL_KEYS {
        lines.push((key.to_string(), format!("unset ({fallback})")));
    }
    lines.sort();
    let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Configuration keys (TOML; override with --set key=value):\n");
    for (k, v) in lines {
        let _ = writeln!(out, "  {k:<width$}  {v}");
    }
    let _ = writeln!(out, "\nRelative output_dir values are placed under ${OUTPUT_ROOT_ENV} when it is set.");
    out
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_configuration() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.toml");
        fs::write(&p, "").unwrap();
        let c = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        fs::write(&p, "[train]\nlearning_rate = 0.1\n").unwrap();
        let err = RunConfig::load(Some(&p), &[]).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(RunConfig::load(None, &["bogus=1".into()]).is_err());
    }

    #[test]
    fn overrides_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "run_seed = 4\n[train]\nmax_epochs = 12\npatience = 5\n").unwrap();
        let c = RunConfig::load(Some(&p), &["train.max_epochs=7".into(), "output_dir=out/x".into()]).unwrap();
        assert_eq!(c.train.max_epochs, 7);
        assert_eq!(c.train.patience, 5);
        assert_eq!(c.train.seed, 4);
        assert_eq!(c.output_dir, PathBuf::from("out/x"));
        let c = RunConfig::load(Some(&p), &["train.seed=11".into()]).unwrap();
        assert_eq!((c.run_seed, c.train.seed), (4, 11));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::load(None, &["train.patience=1000".into()]).is_err());
        assert!(RunConfig::load(None, &["model.backbone=\"resnet50_pretrained\"".into()]).is_err());
        assert!(RunConfig::load(None, &["train.lr_heads=oops".into()]).is_err());
    }

    #[test]
    fn key_listing_covers_every_default() {
        let text = describe_keys();
        for key in ["run_seed", "output_dir", "dataset.n_test_scenes", "model.top_k", "train.patience", "eval.model_name", "train.lr_rescale"] {
            assert!(text.contains(key), "{key} missing");
        }
        assert!(text.contains("train.max_epochs") && text.contains("300"));
    }

    #[test]
    fn toml_roundtrip() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
