use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::{averaged_correlation, median_with, MedianRule, MetricRecord};
use crate::dataset::Attribute;
use crate::error::{Error, Result};

pub const METRIC_RECORD_HEADER: &str = "model,scene,attribute,n,srcc,plcc,krcc,mae";
const GAP: &str = "NA";

/// Medians across scenes of one (model, attribute) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub srcc: f64,
    pub plcc: f64,
    pub krcc: f64,
    pub mae: f64,
    pub scenes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub attributes: Vec<Attribute>,
    /// Model name and one cell per attribute; `None` marks a gap.
    pub rows: Vec<(String, Vec<Option<MetricSummary>>)>,
}

pub fn build_benchmark_table(records: &[MetricRecord], models: &[String], rule: MedianRule) -> BenchmarkTable {
    let attributes = Attribute::ALL.to_vec();
    let mut groups: BTreeMap<(&str, Attribute), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.model.as_str(), r.attribute)).or_default().push(r);
    }
    let rows = models
        .iter()
        .map(|model| {
            let cells = attributes
                .iter()
                .map(|&attr| {
                    let rs = groups.get(&(model.as_str(), attr))?;
                    let med = |f: fn(&MetricRecord) -> f64| {
                        let v: Vec<f64> = rs.iter().map(|r| f(r)).collect();
                        median_with(&v, rule).ok()
                    };
                    Some(MetricSummary {
                        srcc: med(|r| r.srcc)?,
                        plcc: med(|r| r.plcc)?,
                        krcc: med(|r| r.krcc)?,
                        mae: med(|r| r.mae)?,
                        scenes: rs.len(),
                    })
                })
                .collect();
            (model.clone(), cells)
        })
        .collect();
    BenchmarkTable { attributes, rows }
}

impl BenchmarkTable {
    pub fn cell(&self, model: &str, attribute: Attribute) -> Option<&MetricSummary> {
        let col = self.attributes.iter().position(|&a| a == attribute)?;
        self.rows
            .iter()
            .find(|(m, _)| m == model)
            .and_then(|(_, cells)| cells[col].as_ref())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for a in &self.attributes {
            let a = a.to_string().to_lowercase();
            let _ = write!(out, ",{a}_srcc,{a}_plcc,{a}_krcc,{a}_mae");
        }
        out.push('\n');
        for (model, cells) in &self.rows {
            out.push_str(model);
            for c in cells {
                match c {
                    Some(s) => {
                        let _ = write!(out, ",{:.4},{:.4},{:.4},{:.4}", s.srcc, s.plcc, s.krcc, s.mae);
                    }
                    None => {
                        let _ = write!(out, ",{GAP},{GAP},{GAP},{GAP}");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text with one attribute block of SRCC/PLCC/KRCC/MAE per
    /// column group, two decimals, `NA` for gaps.
    pub fn to_text(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|(m, _)| m.len())
            .chain(std::iter::once("Model\\Attribute".len()))
            .max()
            .unwrap_or(0);
        let block_w = 4 * 6 - 1;
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "Model\\Attribute");
        for a in &self.attributes {
            let _ = write!(out, " | {:^block_w$}", a.to_string());
        }
        out.push('\n');
        let _ = write!(out, "{:<name_w$}", "");
        for _ in &self.attributes {
            let _ = write!(out, " | {:>5} {:>5} {:>5} {:>5}", "SRCC", "PLCC", "KRCC", "MAE");
        }
        out.push('\n');
        let rule_len = name_w + self.attributes.len() * (block_w + 3);
        out.push_str(&"-".repeat(rule_len));
        out.push('\n');
        for (model, cells) in &self.rows {
            let _ = write!(out, "{model:<name_w$}");
            for c in cells {
                match c {
                    Some(s) => {
                        let _ = write!(out, " | {:>5.2} {:>5.2} {:>5.2} {:>5.2}", s.srcc, s.plcc, s.krcc, s.mae);
                    }
                    None => {
                        let _ = write!(out, " | {GAP:>5} {GAP:>5} {GAP:>5} {GAP:>5}");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_metric_records(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let mut out = String::from(METRIC_RECORD_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.model, r.scene_id, r.attribute, r.n_images, r.srcc, r.plcc, r.krcc, r.mae
        );
    }
    write_file(path.as_ref(), &out)
}

pub fn read_metric_records(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != METRIC_RECORD_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {METRIC_RECORD_HEADER}"),
        });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let err = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        let num = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| err(format!("{:?} is not a number", &row[i])))
        };
        out.push(MetricRecord {
            model: row[0].to_string(),
            scene_id: row[1].to_string(),
            attribute: row[2].parse().map_err(err)?,
            n_images: row[3].parse().map_err(|_| err(format!("{:?} is not a count", &row[3])))?,
            srcc: num(4)?,
            plcc: num(5)?,
            krcc: num(6)?,
            mae: num(7)?,
        });
    }
    Ok(out)
}

/// Long-format per-scene averaged correlations, one row per record.
pub fn write_averaged_csv(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let mut out = String::from("model,attribute,scene,averaged_correlation\n");
    for r in records {
        let v = averaged_correlation(r)?;
        let _ = writeln!(out, "{},{},{},{:.6}", r.model, r.attribute, r.scene_id, v);
    }
    write_file(path.as_ref(), &out)
}

/// `test_scene,train_scene,count` rows.
pub fn write_histogram_csv(
    path: impl AsRef<Path>,
    histograms: &[super::SceneHistogram],
    train_scenes: &[String],
) -> Result<()> {
    let mut out = String::from("test_scene,train_scene,count\n");
    for h in histograms {
        for (scene, count) in train_scenes.iter().zip(&h.counts) {
            let _ = writeln!(out, "{},{},{}", h.scene_id, scene, count);
        }
    }
    write_file(path.as_ref(), &out)
}
