//! Image buffers, file I/O, resizing, grayscale, zero-parameter Canny, and
//! the concat preprocessing that classifier inputs are built from.

mod canny;
mod io;
mod process;

pub use canny::canny_zero_param;
pub use io::{load_image, save_image};
pub use process::{preprocess_concat, resize_bilinear, to_grayscale, LUMA_WEIGHTS};

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: decode error at byte offset {offset}: {detail}")]
    Decode {
        path: PathBuf,
        offset: u64,
        detail: String,
    },
    #[error("{path}: unsupported format: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// H x W x C pixel array with every value in [0, 1], row-major, C in {1, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f32>,
    ) -> Result<Self, ImagingError> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(ImagingError::InvalidImage(format!(
                "bad dimensions {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(ImagingError::InvalidImage(format!(
                "{height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImagingError::InvalidImage(
                "pixel values must lie in [0, 1]".into(),
            ));
        }
        Ok(ImageBuffer {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Build a buffer from raw values, clamping each into [0, 1].
    pub fn clamped(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self, ImagingError> {
        let pixels = pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(height, width, channels, pixels)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        ImageBuffer {
            height,
            width,
            channels,
            pixels: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        self.pixels[(y * self.width + x) * self.channels + c] = value.clamp(0.0, 1.0);
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, self.channels],
            self.pixels.clone(),
        )
        .expect("image dimensions always form a valid tensor")
    }

    /// Convert a rank-3 tensor back into an image, clamping into [0, 1].
    pub fn from_tensor(t: &Tensor) -> Result<Self, ImagingError> {
        match t.shape() {
            [h, w, c] if *c == 1 || *c == 3 => {
                Self::clamped(*h, *w, *c, t.data().to_vec())
            }
            other => Err(ImagingError::InvalidImage(format!(
                "tensor shape {other:?} is not an image"
            ))),
        }
    }

    /// Largest absolute per-pixel difference to another image.
    pub fn linf_distance(&self, other: &ImageBuffer) -> f32 {
        assert_eq!(self.pixels.len(), other.pixels.len());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}
