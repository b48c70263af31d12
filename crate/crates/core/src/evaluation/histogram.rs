use crate::error::{Error, Result};
use crate::scene::{ClassProbVector, SceneRegistry};

/// Tally of argmax training-scene assignments over a set of images.
pub fn class_distribution_histogram(
    predictions: &[ClassProbVector],
    registry: &SceneRegistry,
) -> Result<Vec<usize>> {
    if predictions.is_empty() {
        return Err(Error::Degenerate("no predictions to tally".into()));
    }
    let mut counts = vec![0usize; registry.count()];
    for p in predictions {
        if p.len() != registry.count() {
            return Err(Error::Shape(format!(
                "prediction over {} scenes, registry has {}",
                p.len(),
                registry.count()
            )));
        }
        counts[p.argmax()] += 1;
    }
    Ok(counts)
}
