use serde::{Deserialize, Serialize};

use crate::dataset::Attribute;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub srcc: f64,
    pub plcc: f64,
    pub krcc: f64,
    pub mae: f64,
}

/// Metrics of one model on one scene for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model: String,
    pub scene_id: String,
    pub attribute: Attribute,
    pub n_images: usize,
    pub srcc: f64,
    pub plcc: f64,
    pub krcc: f64,
    pub mae: f64,
}

impl MetricRecord {
    pub fn new(model: &str, scene_id: &str, attribute: Attribute, n_images: usize, m: SceneMetrics) -> Self {
        Self {
            model: model.to_string(),
            scene_id: scene_id.to_string(),
            attribute,
            n_images,
            srcc: m.srcc,
            plcc: m.plcc,
            krcc: m.krcc,
            mae: m.mae,
        }
    }
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Kendall tau-b in O(n log n): lexicographic sort on `(x, y)`, then count
/// inversions of `y` with a merge sort.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: u64| t * t.saturating_sub(1) / 2;
    let mut x_ties = 0u64;
    let mut joint_ties = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[order[j]] == x[order[i]] {
            j += 1;
        }
        x_ties += pairs((j - i) as u64);
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && y[order[l]] == y[order[k]] {
                l += 1;
            }
            joint_ties += pairs((l - k) as u64);
            k = l;
        }
        i = j;
    }

    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut y_ties = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        y_ties += pairs((j - i) as u64);
        i = j;
    }

    let total = pairs(n as u64);
    let denom = ((total - x_ties) as f64) * ((total - y_ties) as f64);
    if denom <= 0.0 {
        return None;
    }
    let numer = total as f64 - x_ties as f64 - y_ties as f64 + joint_ties as f64 - 2.0 * swaps as f64;
    Some((numer / denom.sqrt()).clamp(-1.0, 1.0))
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (lo, hi) = v.split_at_mut(mid);
        let (blo, bhi) = buf.split_at_mut(mid);
        merge_count(lo, blo) + merge_count(hi, bhi)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

pub fn compute_scene_metrics(preds: &[f64], targets: &[f64]) -> Result<SceneMetrics> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.len() < 2 {
        return Err(Error::MetricUndefined(format!("{} images, need at least 2", preds.len())));
    }
    if preds.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric inputs".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(targets) {
        return Err(Error::MetricUndefined("constant targets".into()));
    }
    if constant(preds) {
        return Err(Error::MetricUndefined("constant predictions".into()));
    }
    let undefined = || Error::MetricUndefined("zero variance".into());
    let mae = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64;
    Ok(SceneMetrics {
        srcc: spearman(preds, targets).ok_or_else(undefined)?,
        plcc: pearson(preds, targets).ok_or_else(undefined)?,
        krcc: kendall_tau_b(preds, targets).ok_or_else(undefined)?,
        mae,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MedianRule {
    /// Middle element, or the mean of the two middle elements.
    #[default]
    Standard,
    /// Element at sorted position `ceil(n/2)` (1-based).
    Lower,
}

pub fn median_across_scenes(values: &[f64]) -> Result<f64> {
    median_with(values, MedianRule::Standard)
}

pub fn median_with(values: &[f64], rule: MedianRule) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("median of no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(match rule {
        MedianRule::Standard if n % 2 == 0 => (v[n / 2 - 1] + v[n / 2]) / 2.0,
        MedianRule::Standard => v[n / 2],
        MedianRule::Lower => v[(n - 1) / 2],
    })
}

/// Mean of SRCC, PLCC and KRCC.
pub fn averaged_correlation(record: &MetricRecord) -> Result<f64> {
    let c = [record.srcc, record.plcc, record.krcc];
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::MetricUndefined(format!(
            "undefined correlation for scene {}",
            record.scene_id
        )));
    }
    Ok(c.iter().sum::<f64>() / 3.0)
}
