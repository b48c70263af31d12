//! Adapter for the published PIQ23 score files.
//!
//! The public release ships one CSV per attribute (`Scores_Overall.csv`,
//! `Scores_Exposure.csv`, `Scores_Details.csv`) with upper-case headers such
//! as `IMAGE PATH`, `JOD`, `SCENE` and `CONDITION`. Column matching here is
//! case-insensitive and ignores spaces/underscores; the attribute comes from
//! an `ATTRIBUTE` column when present, otherwise from the file name. The
//! release carries no face boxes, so `face_region` stays empty.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{AnnotatedImage, Attribute, Lighting, Manifest};
use crate::error::{Error, Result};

fn norm(h: &str) -> String {
    h.chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-'))
        .collect::<String>()
        .to_lowercase()
}

/// True when the header looks like a PIQ23 score file.
pub fn is_piq23_header(header: &[&str]) -> bool {
    let cols: Vec<String> = header.iter().map(|h| norm(h)).collect();
    ["imagepath", "jod", "scene"].iter().all(|c| cols.iter().any(|h| h == c))
}

fn attribute_from_name(path: &Path) -> Option<Attribute> {
    let stem = path.file_stem()?.to_str()?.to_lowercase();
    Attribute::ALL
        .into_iter()
        .find(|a| stem.contains(&a.to_string().to_lowercase()))
}

/// Reads one or more PIQ23 score files into manifest records, merging the
/// attributes of each image. `root` is where image paths resolve.
pub fn load_piq23(files: &[PathBuf], root: impl Into<PathBuf>) -> Result<Manifest> {
    let mut images: Vec<AnnotatedImage> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for path in files {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let err = |line: u64, message: String| Error::Parse {
            path: path.clone(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(norm).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (Some(c_path), Some(c_jod), Some(c_scene)) = (col("imagepath"), col("jod"), col("scene")) else {
            return Err(err(1, "not a PIQ23 score file (needs IMAGE PATH, JOD, SCENE)".into()));
        };
        let c_cond = col("condition").or_else(|| col("lighting"));
        let c_attr = col("attribute");
        let file_attr = attribute_from_name(path);

        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let get = |c: usize| record.get(c).unwrap_or("").trim();
            let image_path = get(c_path).replace('\\', "/");
            let scene_id = get(c_scene).to_string();
            if image_path.is_empty() || scene_id.is_empty() {
                return Err(err(line, "empty image path or scene".into()));
            }
            let score: f64 = get(c_jod)
                .parse()
                .map_err(|_| err(line, format!("JOD {:?} is not a number", get(c_jod))))?;
            let attribute = match c_attr.map(get).filter(|s| !s.is_empty()) {
                Some(a) => a.parse().map_err(|m| err(line, m))?,
                None => file_attr.ok_or_else(|| err(line, "cannot infer attribute".into()))?,
            };
            let lighting = match c_cond.map(get).filter(|s| !s.is_empty()) {
                Some(l) => l.parse().map_err(|m: String| err(line, m))?,
                None => Lighting::Other("unknown".into()),
            };
            match index.get(&image_path) {
                Some(&i) => {
                    if images[i].scores.insert(attribute, score).is_some() {
                        return Err(err(line, format!("duplicate ({image_path}, {attribute}) pair")));
                    }
                }
                None => {
                    index.insert(image_path.clone(), images.len());
                    images.push(AnnotatedImage {
                        image_path,
                        scene_id,
                        lighting,
                        scores: BTreeMap::from([(attribute, score)]),
                        face_region: None,
                    });
                }
            }
        }
    }
    Manifest::from_images(root.into(), images)
}
