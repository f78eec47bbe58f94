//! The measurement protocol: accuracy, L2 distances, ROC/AUC, density
//! histograms, Mann-Whitney U tests, skewness, and averaged CAM heatmaps.

mod heatmap;
mod histogram;
mod mannwhitney;
mod roc;
mod stats;

pub use heatmap::{average_cam_heatmap, write_heatmap_csv, Heatmap};
pub use histogram::{density_histogram, write_histogram_csv, Histogram};
pub use mannwhitney::{mann_whitney_u, UTestMethod, UTestResult};
pub use roc::{roc_auc, write_roc_csv, RocCurve};
pub use stats::skewness;

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{CorpusManifest, Label, Split};
use crate::imaging::{load_image, ImageBuffer, ImagingError};
use crate::inceptionism::InceptionismError;
use crate::nn::{Model, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Inceptionism(#[from] InceptionismError),
    #[error("the {0} split has no usable examples")]
    EmptySplit(String),
    #[error("both classes must be present: {0}")]
    SingleClass(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Fraction of a manifest split the model labels correctly.
pub fn accuracy(
    model: &Model,
    manifest: &CorpusManifest,
    split: Option<Split>,
) -> Result<f64, EvalError> {
    let entries = manifest.select(split, None);
    if entries.is_empty() {
        return Err(EvalError::EmptySplit(
            split.map(|s| s.to_string()).unwrap_or_else(|| "full".into()),
        ));
    }
    let correct: usize = entries
        .par_iter()
        .map(|entry| -> Result<usize, EvalError> {
            let img = load_image(manifest.resolve(entry))?;
            let (class, _) = model.predict_image(&img)?;
            Ok((model.spec.label_of(class) == entry.label) as usize)
        })
        .sum::<Result<usize, _>>()?;
    Ok(correct as f64 / entries.len() as f64)
}

/// Euclidean distance between two images on 0-255-scaled pixels, matching
/// the magnitude range attack tables are reported in.
pub fn l2_distance(a: &ImageBuffer, b: &ImageBuffer) -> Result<f32, EvalError> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(EvalError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    let sum_sq: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = (x as f64 - y as f64) * 255.0;
            d * d
        })
        .sum();
    Ok(sum_sq.sqrt() as f32)
}

/// Per-entry spam-probability scores for ROC curves: the softmax mass on
/// the spam output neuron.
pub fn spam_scores(
    model: &Model,
    manifest: &CorpusManifest,
    split: Option<Split>,
) -> Result<Vec<(PathBuf, Label, f32)>, EvalError> {
    let entries = manifest.select(split, None);
    entries
        .par_iter()
        .map(|entry| -> Result<_, EvalError> {
            let img = load_image(manifest.resolve(entry))?;
            let (_, scores) = model.predict_image(&img)?;
            let spam_idx = model.spec.class_index(Label::Spam);
            Ok((entry.path.clone(), entry.label, scores[spam_idx]))
        })
        .collect()
}

/// Spam-probability of a single prepared image.
pub fn spam_score(model: &Model, img: &ImageBuffer) -> Result<f32, EvalError> {
    let (_, scores) = model.predict_image(img)?;
    Ok(scores[model.spec.class_index(Label::Spam)])
}
