//! Scene-disjoint train/test splits.
//!
//! Whole scenes go to one side or the other. The test side must hold a
//! target fraction of the unique images, and within every lighting class
//! with at least two scenes the test share must stay near the same target.
//! Candidates come from seeded random restarts followed by greedy swap
//! refinement.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use super::manifest::{AnnotatedImage, Lighting};
use crate::error::{Error, Result};
use crate::util::seeded_rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_scenes: Vec<String>,
    pub test_scenes: Vec<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn is_test(&self, scene: &str) -> bool {
        self.test_scenes.iter().any(|s| s == scene)
    }

    pub fn is_train(&self, scene: &str) -> bool {
        self.train_scenes.iter().any(|s| s == scene)
    }
}

#[derive(Debug, Clone)]
pub struct SplitOptions {
    pub max_attempts: usize,
    /// Allowed deviation of each lighting class's test share. Defaults to
    /// twice the global fraction tolerance.
    pub lighting_tolerance: Option<f64>,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            max_attempts: 500,
            lighting_tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightingBalance {
    pub lighting: Lighting,
    pub scenes: usize,
    pub test_scenes: usize,
    pub images: usize,
    pub test_images: usize,
    /// Only classes with at least two scenes are held to the tolerance.
    pub constrained: bool,
}

impl LightingBalance {
    pub fn fraction(&self) -> f64 {
        if self.images == 0 {
            0.0
        } else {
            self.test_images as f64 / self.images as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub total_images: usize,
    pub test_images: usize,
    pub test_scene_count: usize,
    pub lighting: Vec<LightingBalance>,
}

impl SplitReport {
    pub fn fraction(&self) -> f64 {
        if self.total_images == 0 {
            0.0
        } else {
            self.test_images as f64 / self.total_images as f64
        }
    }

    /// Aligned text table of the achieved balance.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "test images: {}/{} ({:.4}) over {} scenes",
            self.test_images,
            self.total_images,
            self.fraction(),
            self.test_scene_count
        );
        let _ = writeln!(
            out,
            "{:<12} {:>7} {:>11} {:>7} {:>11} {:>9}",
            "lighting", "scenes", "test_scenes", "images", "test_images", "fraction"
        );
        for l in &self.lighting {
            let _ = writeln!(
                out,
                "{:<12} {:>7} {:>11} {:>7} {:>11} {:>9.4}",
                l.lighting.to_string(),
                l.scenes,
                l.test_scenes,
                l.images,
                l.test_images,
                l.fraction()
            );
        }
        out
    }
}

struct SceneStats {
    ids: Vec<String>,
    images: Vec<usize>,
    lighting: Vec<usize>,
    classes: Vec<Lighting>,
}

fn scene_stats(manifest: &[AnnotatedImage]) -> SceneStats {
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut votes: Vec<BTreeMap<&Lighting, (usize, usize)>> = Vec::new();
    let mut seen_paths = HashSet::new();

    for (order, img) in manifest.iter().enumerate() {
        if !seen_paths.insert(img.image_path.as_str()) {
            continue;
        }
        let i = *index.entry(img.scene_id.as_str()).or_insert_with(|| {
            ids.push(img.scene_id.clone());
            counts.push(0);
            votes.push(BTreeMap::new());
            ids.len() - 1
        });
        counts[i] += 1;
        votes[i].entry(&img.lighting).or_insert((0, order)).0 += 1;
    }

    // Majority lighting per scene, earliest-seen class on ties.
    let mut classes: Vec<Lighting> = Vec::new();
    let mut lighting = Vec::with_capacity(ids.len());
    for v in &votes {
        let (best, _) = v
            .iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .expect("scene has at least one image");
        let c = match classes.iter().position(|c| c == *best) {
            Some(c) => c,
            None => {
                classes.push((*best).clone());
                classes.len() - 1
            }
        };
        lighting.push(c);
    }
    SceneStats {
        ids,
        images: counts,
        lighting,
        classes,
    }
}

struct Evaluator<'a> {
    stats: &'a SceneStats,
    total: usize,
    class_images: Vec<usize>,
    constrained: Vec<bool>,
    target: f64,
    tol: f64,
    lighting_tol: f64,
}

impl Evaluator<'_> {
    /// Sum of constraint violations; zero means feasible. The global term
    /// dominates so refinement repairs it first.
    fn cost(&self, in_test: &[bool]) -> f64 {
        let mut test = 0usize;
        let mut class_test = vec![0usize; self.class_images.len()];
        for (s, &t) in in_test.iter().enumerate() {
            if t {
                test += self.stats.images[s];
                class_test[self.stats.lighting[s]] += self.stats.images[s];
            }
        }
        let frac = test as f64 / self.total as f64;
        let mut cost = 10.0 * ((frac - self.target).abs() - self.tol).max(0.0);
        for (c, &n) in self.class_images.iter().enumerate() {
            if self.constrained[c] && n > 0 {
                let f = class_test[c] as f64 / n as f64;
                cost += ((f - self.target).abs() - self.lighting_tol).max(0.0);
            }
        }
        cost
    }
}

pub fn generate_scene_split(
    manifest: &[AnnotatedImage],
    n_test_scenes: usize,
    target_fraction: f64,
    fraction_tolerance: f64,
    seed: u64,
) -> Result<SplitSpec> {
    generate_scene_split_with(
        manifest,
        n_test_scenes,
        target_fraction,
        fraction_tolerance,
        seed,
        &SplitOptions::default(),
    )
}

pub fn generate_scene_split_with(
    manifest: &[AnnotatedImage],
    n_test_scenes: usize,
    target_fraction: f64,
    fraction_tolerance: f64,
    seed: u64,
    options: &SplitOptions,
) -> Result<SplitSpec> {
    let stats = scene_stats(manifest);
    let n = stats.ids.len();
    if n_test_scenes == 0 {
        return Ok(SplitSpec {
            train_scenes: stats.ids,
            test_scenes: Vec::new(),
            seed,
        });
    }
    if n_test_scenes >= n {
        return Err(Error::Invalid(format!(
            "{n_test_scenes} test scenes requested but the manifest has {n} scenes"
        )));
    }
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "target fraction {target_fraction} outside (0, 1)"
        )));
    }
    if !(fraction_tolerance >= 0.0) {
        return Err(Error::Invalid("fraction tolerance must be non-negative".into()));
    }

    let mut class_images = vec![0usize; stats.classes.len()];
    let mut class_scenes = vec![0usize; stats.classes.len()];
    for s in 0..n {
        class_images[stats.lighting[s]] += stats.images[s];
        class_scenes[stats.lighting[s]] += 1;
    }
    let eval = Evaluator {
        stats: &stats,
        total: stats.images.iter().sum(),
        constrained: class_scenes.iter().map(|&c| c >= 2).collect(),
        class_images,
        target: target_fraction,
        tol: fraction_tolerance,
        lighting_tol: options.lighting_tolerance.unwrap_or(2.0 * fraction_tolerance),
    };

    let mut rng = seeded_rng(&[seed, SPLIT_STREAM]);
    let mut best: Option<(f64, Vec<bool>)> = None;
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..options.max_attempts.max(1) {
        order.shuffle(&mut rng);
        let mut in_test = vec![false; n];
        for &s in &order[..n_test_scenes] {
            in_test[s] = true;
        }
        let mut cost = eval.cost(&in_test);

        // Greedy best-improvement swaps.
        while cost > 0.0 {
            let mut best_swap: Option<(f64, usize, usize)> = None;
            for t in 0..n {
                if !in_test[t] {
                    continue;
                }
                for r in 0..n {
                    if in_test[r] {
                        continue;
                    }
                    in_test[t] = false;
                    in_test[r] = true;
                    let c = eval.cost(&in_test);
                    in_test[t] = true;
                    in_test[r] = false;
                    if c < best_swap.map_or(cost, |b| b.0) {
                        best_swap = Some((c, t, r));
                    }
                }
            }
            match best_swap {
                Some((c, t, r)) => {
                    in_test[t] = false;
                    in_test[r] = true;
                    cost = c;
                }
                None => break,
            }
        }

        if best.as_ref().map_or(true, |b| cost < b.0) {
            best = Some((cost, in_test));
        }
        if cost == 0.0 {
            break;
        }
    }

    let (cost, in_test) = best.expect("at least one attempt");
    let spec = SplitSpec {
        train_scenes: (0..n).filter(|&s| !in_test[s]).map(|s| stats.ids[s].clone()).collect(),
        test_scenes: (0..n).filter(|&s| in_test[s]).map(|s| stats.ids[s].clone()).collect(),
        seed,
    };
    if cost > 0.0 {
        let report = split_report(manifest, &spec);
        return Err(Error::Constraint(format!(
            "no split within tolerance after {} attempts; best candidate test scenes [{}]\n{}",
            options.max_attempts,
            spec.test_scenes.join(", "),
            report.render()
        )));
    }
    Ok(spec)
}

// Stream tag separating split draws from other consumers of the same seed.
const SPLIT_STREAM: u64 = 0x5eed_5711;

pub fn split_report(manifest: &[AnnotatedImage], split: &SplitSpec) -> SplitReport {
    let stats = scene_stats(manifest);
    let mut lighting: Vec<LightingBalance> = stats
        .classes
        .iter()
        .map(|l| LightingBalance {
            lighting: l.clone(),
            scenes: 0,
            test_scenes: 0,
            images: 0,
            test_images: 0,
            constrained: false,
        })
        .collect();
    let mut test_images = 0;
    let mut test_scene_count = 0;
    for (s, id) in stats.ids.iter().enumerate() {
        let l = &mut lighting[stats.lighting[s]];
        l.scenes += 1;
        l.images += stats.images[s];
        if split.is_test(id) {
            l.test_scenes += 1;
            l.test_images += stats.images[s];
            test_images += stats.images[s];
            test_scene_count += 1;
        }
    }
    for l in &mut lighting {
        l.constrained = l.scenes >= 2;
    }
    SplitReport {
        total_images: stats.images.iter().sum(),
        test_images,
        test_scene_count,
        lighting,
    }
}

pub fn write_split(path: impl AsRef<Path>, split: &SplitSpec) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_split(split))
        .map_err(|e| Error::io(format!("writing split {}", path.display()), e))
}

fn render_split(split: &SplitSpec) -> String {
    let mut out = String::from("# scene split\n");
    let _ = writeln!(out, "seed = {}", split.seed);
    out.push_str("\n[train]\n");
    for s in &split.train_scenes {
        out.push_str(s);
        out.push('\n');
    }
    out.push_str("\n[test]\n");
    for s in &split.test_scenes {
        out.push_str(s);
        out.push('\n');
    }
    out
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading split {}", path.display()), e))?;
    parse_split(&text, path)
}

fn parse_split(text: &str, path: &Path) -> Result<SplitSpec> {
    enum Section {
        None,
        Train,
        Test,
    }
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut section = Section::None;
    let mut seed = None;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "[train]" => section = Section::Train,
            "[test]" => section = Section::Test,
            _ => match section {
                Section::None => {
                    let value = line
                        .strip_prefix("seed")
                        .and_then(|r| r.trim_start().strip_prefix('='))
                        .ok_or_else(|| err(i + 1, format!("unexpected {line:?} before sections")))?;
                    seed = Some(
                        value
                            .trim()
                            .parse()
                            .map_err(|_| err(i + 1, "seed is not an integer".into()))?,
                    );
                }
                Section::Train => train.push(line.to_string()),
                Section::Test => test.push(line.to_string()),
            },
        }
    }
    let seed = seed.ok_or_else(|| err(1, "missing seed".into()))?;
    if let Some(dup) = train.iter().find(|s| test.contains(s)) {
        return Err(err(0, format!("scene {dup:?} is on both sides")));
    }
    Ok(SplitSpec {
        train_scenes: train,
        test_scenes: test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use crate::dataset::manifest::Attribute;

    fn image(path: String, scene: &str, lighting: Lighting) -> AnnotatedImage {
        AnnotatedImage {
            image_path: path,
            scene_id: scene.to_string(),
            lighting,
            scores: BTreeMap::from([(Attribute::Overall, 0.0)]),
            face_region: None,
        }
    }

    fn uniform_manifest(scenes: usize, per_scene: usize) -> Vec<AnnotatedImage> {
        (0..scenes)
            .flat_map(|s| {
                (0..per_scene).map(move |i| {
                    image(format!("s{s}/{i}.png"), &format!("s{s}"), Lighting::Outdoor)
                })
            })
            .collect()
    }

    #[test]
    fn vacuous_split() {
        let m = uniform_manifest(3, 2);
        let s = generate_scene_split(&m, 0, 0.3, 0.01, 1).unwrap();
        assert!(s.test_scenes.is_empty());
        assert_eq!(s.train_scenes, vec!["s0", "s1", "s2"]);
    }

    #[test]
    fn four_equal_scenes_any_single_scene() {
        // Enumerating all four single-scene candidates: each holds 10/40.
        let m = uniform_manifest(4, 10);
        for seed in 0..8 {
            let s = generate_scene_split(&m, 1, 0.25, 0.01, seed).unwrap();
            assert_eq!(s.test_scenes.len(), 1);
            assert_eq!(split_report(&m, &s).fraction(), 0.25);
        }
    }

    #[test]
    fn unsatisfiable_reports_best_candidate() {
        let m = uniform_manifest(4, 10);
        let opts = SplitOptions {
            max_attempts: 5,
            ..Default::default()
        };
        match generate_scene_split_with(&m, 1, 0.4, 0.01, 3, &opts) {
            Err(Error::Constraint(msg)) => assert!(msg.contains("best candidate")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn precondition_errors() {
        let m = uniform_manifest(3, 2);
        assert!(generate_scene_split(&m, 3, 0.3, 0.1, 0).is_err());
        assert!(generate_scene_split(&m, 1, 1.0, 0.1, 0).is_err());
        assert!(generate_scene_split(&m, 1, 0.0, 0.1, 0).is_err());
    }

    #[test]
    fn lighting_balance_enforced() {
        let mut m = Vec::new();
        for s in 0..8 {
            let l = if s < 4 { Lighting::Outdoor } else { Lighting::Night };
            let n = if s < 4 { 10 } else { 30 };
            for i in 0..n {
                m.push(image(format!("{s}/{i}"), &format!("s{s}"), l.clone()));
            }
        }
        let s = generate_scene_split(&m, 2, 0.25, 0.01, 11).unwrap();
        let r = split_report(&m, &s);
        for l in &r.lighting {
            assert!((l.fraction() - 0.25).abs() <= 0.02, "{l:?}");
        }
        assert_eq!(r.test_scene_count, 2);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let m = uniform_manifest(20, 5);
        let a = generate_scene_split(&m, 6, 0.3, 0.01, 42).unwrap();
        let b = generate_scene_split(&m, 6, 0.3, 0.01, 42).unwrap();
        assert_eq!(a, b);
        let train: HashSet<_> = a.train_scenes.iter().collect();
        assert!(a.test_scenes.iter().all(|s| !train.contains(s)));
        assert_eq!(a.train_scenes.len() + a.test_scenes.len(), 20);
    }

    #[test]
    fn split_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SplitSpec {
            train_scenes: vec!["a".into(), "c".into()],
            test_scenes: vec!["b".into()],
            seed: 99,
        };
        let p = dir.path().join("split.txt");
        write_split(&p, &spec).unwrap();
        assert_eq!(read_split(&p).unwrap(), spec);
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "# scene split\nseed = 99\n\n[train]\na\nc\n\n[test]\nb\n");
    }
}
