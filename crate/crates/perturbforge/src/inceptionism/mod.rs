//! Natural perturbations via activation maximization, confined by
//! Grad-CAM-derived masks.
//!
//! Ham images are "dreamified" against an inverted-label model, blended in
//! batches of four into grayscale natural perturbations, and superimposed on
//! spam images only where the spam classifier's class activation map is
//! weak, leaving the high-activation regions for the universal perturbation.

mod dream;
mod gradcam;
mod mask;

pub use dream::{deep_dream, DreamConfig, DreamOutcome};
pub use gradcam::grad_cam;
pub use mask::{apply_natural, cam_to_mask, DEFAULT_BLEND_ALPHA, MASK_THRESHOLD};

use std::path::PathBuf;

use thiserror::Error;

use crate::imaging::{ImageBuffer, ImagingError};
use crate::nn::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum InceptionismError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("{0}")]
    InvalidInput(String),
}

impl From<TensorError> for InceptionismError {
    fn from(e: TensorError) -> Self {
        InceptionismError::Model(ModelError::Tensor(e))
    }
}

/// A class activation map normalized to [0, 1]; when any activation is
/// positive the maximum is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl CamMap {
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// View the map as a single-channel image.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::clamped(self.height, self.width, 1, self.values.clone())
            .expect("CAM values are normalized")
    }

    /// Population variance of the map values.
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

/// A blended, dreamified grayscale overlay plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalPerturbation {
    /// Single-channel image, same resolution as the dream inputs.
    pub image: ImageBuffer,
    pub sources: Vec<PathBuf>,
    pub weights: Vec<f32>,
}

/// Pixelwise weighted blend of a batch of exactly four dreamified images,
/// converted to grayscale.
pub fn blend_batch(
    dreamified: &[ImageBuffer],
    weights: &[f32],
    sources: Vec<PathBuf>,
) -> Result<NaturalPerturbation, InceptionismError> {
    if dreamified.len() != 4 {
        return Err(InceptionismError::InvalidInput(format!(
            "natural perturbations blend exactly 4 images, got {}",
            dreamified.len()
        )));
    }
    if weights.len() != 4 {
        return Err(InceptionismError::InvalidInput(format!(
            "need 4 blend weights, got {}",
            weights.len()
        )));
    }
    let first = &dreamified[0];
    let (h, w, c) = (first.height(), first.width(), first.channels());
    for img in &dreamified[1..] {
        if img.height() != h || img.width() != w || img.channels() != c {
            return Err(InceptionismError::InvalidInput(
                "blend batch images must share one shape".into(),
            ));
        }
    }
    let mut acc = vec![0.0f32; h * w * c];
    for (img, &wt) in dreamified.iter().zip(weights) {
        for (a, &p) in acc.iter_mut().zip(img.pixels()) {
            *a += wt * p;
        }
    }
    let blended = ImageBuffer::clamped(h, w, c, acc)?;
    let gray = if c == 3 {
        crate::imaging::to_grayscale(&blended)?
    } else {
        blended
    };
    Ok(NaturalPerturbation {
        image: gray,
        sources,
        weights: weights.to_vec(),
    })
}

pub const DEFAULT_BLEND_WEIGHTS: [f32; 4] = [0.25; 4];
