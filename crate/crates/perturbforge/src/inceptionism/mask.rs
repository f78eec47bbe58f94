//! CAM-derived masks and natural-perturbation superimposition.

use crate::imaging::{resize_bilinear, ImageBuffer};

use super::{CamMap, InceptionismError, NaturalPerturbation};

pub const MASK_THRESHOLD: f32 = 0.5;
pub const DEFAULT_BLEND_ALPHA: f32 = 0.5;

/// Upscale the CAM, binarize at 0.5, and invert: the mask is 1 exactly where
/// the class activation is weak, so overlays never touch the regions the
/// universal perturbation relies on.
pub fn cam_to_mask(
    cam: &CamMap,
    out_h: usize,
    out_w: usize,
) -> Result<ImageBuffer, InceptionismError> {
    let upscaled = resize_bilinear(&cam.to_image(), out_h, out_w)?;
    let pixels: Vec<f32> = upscaled
        .pixels()
        .iter()
        .map(|&v| if v < MASK_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Ok(ImageBuffer::new(out_h, out_w, 1, pixels)?)
}

/// Superimpose a natural perturbation onto a spam image inside the mask:
/// out = (1 - alpha) * spam + alpha * perturbation where mask = 1, spam
/// untouched where mask = 0.
pub fn apply_natural(
    spam: &ImageBuffer,
    pert: &NaturalPerturbation,
    mask: &ImageBuffer,
    alpha: f32,
) -> Result<ImageBuffer, InceptionismError> {
    let (h, w) = (spam.height(), spam.width());
    if pert.image.height() != h || pert.image.width() != w || pert.image.channels() != 1 {
        return Err(InceptionismError::InvalidInput(format!(
            "perturbation {}x{}x{} does not align with spam {h}x{w}",
            pert.image.height(),
            pert.image.width(),
            pert.image.channels()
        )));
    }
    if mask.height() != h || mask.width() != w || mask.channels() != 1 {
        return Err(InceptionismError::InvalidInput(format!(
            "mask {}x{}x{} does not align with spam {h}x{w}",
            mask.height(),
            mask.width(),
            mask.channels()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(InceptionismError::InvalidInput(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let c = spam.channels();
    let mut pixels = spam.pixels().to_vec();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x, 0) == 1.0 {
                let p = pert.image.get(y, x, 0);
                for ch in 0..c {
                    let i = (y * w + x) * c + ch;
                    pixels[i] = ((1.0 - alpha) * pixels[i] + alpha * p).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(ImageBuffer::clamped(h, w, c, pixels)?)
}
