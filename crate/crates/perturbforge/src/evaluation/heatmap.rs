//! Averaged class-activation heatmaps over a corpus split.

use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{CorpusManifest, Label, Split};
use crate::imaging::load_image;
use crate::inceptionism::grad_cam;
use crate::nn::{prepare_input, Model};

use super::EvalError;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Per-pixel mean of the individual CAMs, in [0, 1].
    pub values: Vec<f32>,
    pub samples: usize,
}

impl Heatmap {
    /// Population variance of the heatmap values; a flat (evenly spread)
    /// activation pattern scores low.
    pub fn spatial_variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        self.values
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n
    }
}

/// Mean of the per-image Grad-CAM maps (pre-binarization) over the spam
/// entries of a split.
pub fn average_cam_heatmap(
    model: &Model,
    manifest: &CorpusManifest,
    split: Option<Split>,
) -> Result<Heatmap, EvalError> {
    let entries = manifest.select(split, Some(Label::Spam));
    if entries.is_empty() {
        return Err(EvalError::EmptySplit("spam".into()));
    }
    let cams = entries
        .par_iter()
        .map(|entry| -> Result<_, EvalError> {
            let img = load_image(manifest.resolve(entry))?;
            let x = prepare_input(&model.spec, &img)?;
            Ok(grad_cam(model, &x)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (height, width) = (cams[0].height, cams[0].width);
    let mut acc = vec![0.0f64; height * width];
    for cam in &cams {
        for (a, &v) in acc.iter_mut().zip(&cam.values) {
            *a += v as f64;
        }
    }
    let n = cams.len() as f64;
    Ok(Heatmap {
        height,
        width,
        values: acc.iter().map(|&v| (v / n) as f32).collect(),
        samples: cams.len(),
    })
}

/// Row-major CSV grid.
pub fn write_heatmap_csv(h: &Heatmap, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in h.values.chunks(h.width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}
