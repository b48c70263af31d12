use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::SceneRegistry;

pub const MANIFEST_HEADER: [&str; 9] = [
    "image_path",
    "scene_id",
    "lighting",
    "attribute",
    "score",
    "face_x",
    "face_y",
    "face_w",
    "face_h",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lighting {
    Outdoor,
    Indoor,
    Lowlight,
    Night,
    Other(String),
}

impl FromStr for Lighting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '-' | '_'))
            .collect::<String>()
            .to_lowercase();
        Ok(match norm.as_str() {
            "" => return Err("empty lighting".into()),
            "outdoor" => Lighting::Outdoor,
            "indoor" => Lighting::Indoor,
            "lowlight" => Lighting::Lowlight,
            "night" => Lighting::Night,
            _ => Lighting::Other(s.trim().to_string()),
        })
    }
}

impl fmt::Display for Lighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lighting::Outdoor => f.write_str("outdoor"),
            Lighting::Indoor => f.write_str("indoor"),
            Lighting::Lowlight => f.write_str("lowlight"),
            Lighting::Night => f.write_str("night"),
            Lighting::Other(s) => f.write_str(s),
        }
    }
}

/// Judged quality dimension. `Overall` uses the whole frame; the other two
/// are evaluated on the face region when one is annotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    #[serde(alias = "overall")]
    Overall,
    #[serde(alias = "exposure")]
    Exposure,
    #[serde(alias = "details")]
    Details,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Overall, Attribute::Exposure, Attribute::Details];

    pub fn uses_face_region(self) -> bool {
        !matches!(self, Attribute::Overall)
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_lowercase().as_str() {
            "overall" => Ok(Attribute::Overall),
            "exposure" => Ok(Attribute::Exposure),
            "details" | "detail" => Ok(Attribute::Details),
            other => Err(format!("unknown attribute {other:?}")),
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Overall => "Overall",
            Attribute::Exposure => "Exposure",
            Attribute::Details => "Details",
        })
    }
}

/// Pixel rectangle, also used for generic regions of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceRegion {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl FaceRegion {
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && u64::from(self.x) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.height) <= u64::from(height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    /// Path as written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub image_path: String,
    pub scene_id: String,
    pub lighting: Lighting,
    pub scores: BTreeMap<Attribute, f64>,
    pub face_region: Option<FaceRegion>,
}

impl AnnotatedImage {
    pub fn score(&self, attribute: Attribute) -> Option<f64> {
        self.scores.get(&attribute).copied()
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub images: Vec<AnnotatedImage>,
    /// Every scene of the manifest in first-appearance order.
    pub registry: SceneRegistry,
}

impl Manifest {
    pub fn from_images(root: PathBuf, images: Vec<AnnotatedImage>) -> Result<Self> {
        let registry = registry_of(&images)?;
        Ok(Self {
            root,
            images,
            registry,
        })
    }

    pub fn resolve(&self, image: &AnnotatedImage) -> PathBuf {
        let p = Path::new(&image.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

pub(crate) fn registry_of(images: &[AnnotatedImage]) -> Result<SceneRegistry> {
    let mut ids: Vec<String> = Vec::new();
    for img in images {
        if !ids.iter().any(|s| s == &img.scene_id) {
            ids.push(img.scene_id.clone());
        }
    }
    if ids.is_empty() {
        return Ok(SceneRegistry::empty());
    }
    SceneRegistry::new(ids)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    let images = parse_manifest(&text, path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Manifest::from_images(root, images)
}

pub(crate) fn parse_manifest(text: &str, path: &Path) -> Result<Vec<AnnotatedImage>> {
    let err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    for (i, want) in MANIFEST_HEADER.iter().enumerate().take(5) {
        match header.get(i) {
            Some(got) if got.trim() == *want => {}
            _ => return Err(err(1, format!("missing column {want:?} at position {}", i + 1))),
        }
    }
    let has_face = match header.len() {
        5 => false,
        9 if header
            .iter()
            .skip(5)
            .zip(&MANIFEST_HEADER[5..])
            .all(|(g, w)| g.trim() == *w) =>
        {
            true
        }
        _ => {
            return Err(err(
                1,
                format!("header must be exactly {}", MANIFEST_HEADER.join(",")),
            ))
        }
    };

    let mut images: Vec<AnnotatedImage> = Vec::new();
    let mut by_path: HashMap<String, usize> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let field = |i: usize| record.get(i).unwrap_or("").trim();

        let image_path = field(0);
        if image_path.is_empty() {
            return Err(err(line, "empty image_path".into()));
        }
        let scene_id = field(1);
        if scene_id.is_empty() {
            return Err(err(line, "empty scene_id".into()));
        }
        let lighting: Lighting = field(2).parse().map_err(|m| err(line, m))?;
        let attribute: Attribute = field(3).parse().map_err(|m| err(line, m))?;
        let score: f64 = field(4)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| err(line, format!("score {:?} is not a finite number", field(4))))?;

        let face = if has_face {
            let raw: Vec<&str> = (5..9).map(field).collect();
            if raw.iter().all(|s| s.is_empty()) {
                None
            } else {
                let mut v = [0u32; 4];
                for (slot, s) in v.iter_mut().zip(&raw) {
                    *slot = s
                        .parse()
                        .map_err(|_| err(line, format!("face column value {s:?} is not a pixel count")))?;
                }
                if v[2] == 0 || v[3] == 0 {
                    return Err(err(line, "face region has zero size".into()));
                }
                Some(FaceRegion {
                    x: v[0],
                    y: v[1],
                    width: v[2],
                    height: v[3],
                })
            }
        } else {
            None
        };

        match by_path.get(image_path) {
            Some(&idx) => {
                let img = &mut images[idx];
                if img.scene_id != scene_id {
                    return Err(err(line, format!("image listed under scenes {:?} and {scene_id:?}", img.scene_id)));
                }
                if img.lighting != lighting {
                    return Err(err(line, "conflicting lighting for the same image".into()));
                }
                if img.face_region != face {
                    return Err(err(line, "conflicting face region for the same image".into()));
                }
                if img.scores.insert(attribute, score).is_some() {
                    return Err(err(line, format!("duplicate ({image_path}, {attribute}) pair")));
                }
            }
            None => {
                by_path.insert(image_path.to_string(), images.len());
                images.push(AnnotatedImage {
                    image_path: image_path.to_string(),
                    scene_id: scene_id.to_string(),
                    lighting,
                    scores: BTreeMap::from([(attribute, score)]),
                    face_region: face,
                });
            }
        }
    }
    Ok(images)
}

/// Writes one row per (image, attribute). Scores use the shortest
/// representation that parses back to the same `f64`.
pub fn write_manifest(path: impl AsRef<Path>, images: &[AnnotatedImage]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for img in images {
        if img.scores.is_empty() {
            return Err(Error::Invalid(format!("{} has no attribute scores", img.image_path)));
        }
        let face: [String; 4] = match img.face_region {
            Some(r) => [r.x, r.y, r.width, r.height].map(|v| v.to_string()),
            None => Default::default(),
        };
        for (attr, score) in &img.scores {
            let lighting = img.lighting.to_string();
            let attr = attr.to_string();
            let score = score.to_string();
            let mut row: Vec<&str> = vec![&img.image_path, &img.scene_id, &lighting, &attr, &score];
            row.extend(face.iter().map(String::as_str));
            w.write_record(&row)?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vec<AnnotatedImage>> {
        parse_manifest(text, Path::new("m.csv"))
    }

    const HEAD: &str = "image_path,scene_id,lighting,attribute,score,face_x,face_y,face_w,face_h\n";

    #[test]
    fn three_rows_two_scenes() {
        let text = format!(
            "{HEAD}a.png,s1,outdoor,Overall,1.5,,,,\nb.png,s1,outdoor,Overall,2,,,,\nc.png,s2,night,Overall,-0.5,10,20,30,40\n"
        );
        let images = parse(&text).unwrap();
        assert_eq!(images.len(), 3);
        assert_eq!(registry_of(&images).unwrap().count(), 2);
        assert_eq!(
            images[2].face_region,
            Some(FaceRegion { x: 10, y: 20, width: 30, height: 40 })
        );
        assert_eq!(images[2].lighting, Lighting::Night);
    }

    #[test]
    fn empty_data_section() {
        let images = parse(HEAD).unwrap();
        assert!(images.is_empty());
        assert!(registry_of(&images).unwrap().is_empty());
    }

    #[test]
    fn non_numeric_score_names_line() {
        let text = format!("{HEAD}a.png,s1,outdoor,Overall,1,,,,\nb.png,s1,outdoor,Overall,abc,,,,\n");
        match parse(&text) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_pair_rejected() {
        let text = format!("{HEAD}a.png,s1,outdoor,Overall,1,,,,\na.png,s1,outdoor,Overall,2,,,,\n");
        assert!(matches!(parse(&text), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn attributes_merge_per_image() {
        let text = format!("{HEAD}a.png,s1,indoor,Overall,1,,,,\na.png,s1,indoor,Details,2,,,,\n");
        let images = parse(&text).unwrap();
        assert_eq!(images.len(), 1);
        assert_eq!(images[0].score(Attribute::Details), Some(2.0));
    }

    #[test]
    fn missing_column_rejected() {
        let text = "image_path,scene_id,lighting,score\na.png,s1,outdoor,1\n";
        assert!(matches!(parse(text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn short_header_without_face_columns() {
        let text = "image_path,scene_id,lighting,attribute,score\na.png,s1,Low Light,Exposure,0.25\n";
        let images = parse(text).unwrap();
        assert_eq!(images[0].lighting, Lighting::Lowlight);
        assert_eq!(images[0].face_region, None);
    }

    #[test]
    fn lighting_is_extensible() {
        assert_eq!("backlit".parse::<Lighting>().unwrap(), Lighting::Other("backlit".into()));
        assert_eq!(Lighting::Other("backlit".into()).to_string(), "backlit");
    }

    fn image_strategy() -> impl Strategy<Value = AnnotatedImage> {
        (
            "[a-z]{1,6}\\.png",
            "s[0-9]{1,2}",
            prop::sample::select(vec![
                Lighting::Outdoor,
                Lighting::Indoor,
                Lighting::Lowlight,
                Lighting::Night,
                Lighting::Other("studio".into()),
            ]),
            prop::collection::btree_map(
                prop::sample::select(Attribute::ALL.to_vec()),
                -1e6f64..1e6,
                1..=3,
            ),
            prop::option::of((0u32..500, 0u32..500, 1u32..500, 1u32..500)),
        )
            .prop_map(|(p, s, lighting, scores, face)| AnnotatedImage {
                image_path: p,
                scene_id: s,
                lighting,
                scores,
                face_region: face.map(|(x, y, width, height)| FaceRegion { x, y, width, height }),
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn save_load_roundtrip(mut images in prop::collection::vec(image_strategy(), 0..12)) {
            let mut seen = std::collections::HashSet::new();
            images.retain(|i| seen.insert(i.image_path.clone()));
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            write_manifest(&path, &images).unwrap();
            let back = load_manifest(&path).unwrap();
            prop_assert_eq!(back.images, images);
        }
    }
}
