//! Resizing, grayscale conversion, and the concat preprocessing stage.

use super::canny::canny_zero_param;
use super::{ImageBuffer, ImagingError};
use crate::tensor::bilinear_axis_plan;

/// Bilinear resize with half-pixel centers. Resizing to the same size is an
/// exact identity.
pub fn resize_bilinear(
    img: &ImageBuffer,
    out_h: usize,
    out_w: usize,
) -> Result<ImageBuffer, ImagingError> {
    if out_h == 0 || out_w == 0 {
        return Err(ImagingError::InvalidImage(
            "resize target must have positive dimensions".into(),
        ));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let rows = bilinear_axis_plan(h, out_h);
    let cols = bilinear_axis_plan(w, out_w);
    let src = img.pixels();
    let mut out = vec![0.0f32; out_h * out_w * c];
    for (oy, &(y0, y1, wy0, wy1)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, wx0, wx1)) in cols.iter().enumerate() {
            for ch in 0..c {
                let v00 = src[(y0 * w + x0) * c + ch];
                let v01 = src[(y0 * w + x1) * c + ch];
                let v10 = src[(y1 * w + x0) * c + ch];
                let v11 = src[(y1 * w + x1) * c + ch];
                out[(oy * out_w + ox) * c + ch] =
                    wy0 * (wx0 * v00 + wx1 * v01) + wy1 * (wx0 * v10 + wx1 * v11);
            }
        }
    }
    ImageBuffer::clamped(out_h, out_w, c, out)
}

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Convert a 3-channel image to 1 channel with the 0.299/0.587/0.114 weights.
pub fn to_grayscale(img: &ImageBuffer) -> Result<ImageBuffer, ImagingError> {
    if img.channels() != 3 {
        return Err(ImagingError::InvalidImage(format!(
            "grayscale conversion expects 3 channels, got {}",
            img.channels()
        )));
    }
    let out: Vec<f32> = img
        .pixels()
        .chunks_exact(3)
        .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
        .collect();
    ImageBuffer::clamped(img.height(), img.width(), 1, out)
}

/// Classifier preprocessing: a 32x32 downsized copy stacked on top of its
/// binary edge map (replicated to 3 channels), giving a 64x32x3 image.
pub fn preprocess_concat(img: &ImageBuffer) -> Result<ImageBuffer, ImagingError> {
    if img.channels() != 3 {
        return Err(ImagingError::InvalidImage(format!(
            "concat preprocessing expects an RGB image, got {} channels",
            img.channels()
        )));
    }
    let down = resize_bilinear(img, 32, 32)?;
    let edges = canny_zero_param(&down)?;
    let mut pixels = Vec::with_capacity(64 * 32 * 3);
    pixels.extend_from_slice(down.pixels());
    for &e in edges.pixels() {
        pixels.extend_from_slice(&[e, e, e]);
    }
    ImageBuffer::new(64, 32, 3, pixels)
}
