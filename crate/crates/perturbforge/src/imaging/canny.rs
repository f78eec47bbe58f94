//! Zero-parameter Canny edge detection.
//!
//! Hysteresis thresholds are derived from the median grayscale intensity m:
//! lower = max(0, 0.67 m) and upper = min(1, 1.33 m). The stages are the
//! classic ones: 5x5 Gaussian blur (sigma 1.4), Sobel gradients, non-maximum
//! suppression, and hysteresis. Gradient-magnitude plateaus (a two-pixel-wide
//! ridge straddles every clean step edge) are preserved by suppressing with
//! strict `<` comparisons only.

use super::{to_grayscale, ImageBuffer, ImagingError};
use crate::tensor::ops_internal::{correlate_replicate, gaussian5_kernel, SOBEL_X, SOBEL_Y};

const THRESHOLD_SIGMA: f32 = 0.33;

/// Gradient magnitudes below this are treated as flat. Float summation of
/// the blur/Sobel kernels over constant regions leaves ulp-sized residue,
/// which must never count as an edge even when the median-derived
/// thresholds degenerate to zero on mostly-black images.
const MAG_FLOOR: f32 = 1e-4;

/// Relative slack when comparing a pixel against its directional neighbors:
/// a clean step edge produces a two-pixel magnitude plateau that is equal in
/// exact arithmetic, and suppression must not split it on rounding luck.
const NMS_REL_TOL: f32 = 1e-5;

/// Binary edge map of a 1- or 3-channel image; output values are exactly
/// 0.0 or 1.0, single channel.
pub fn canny_zero_param(img: &ImageBuffer) -> Result<ImageBuffer, ImagingError> {
    let gray = match img.channels() {
        1 => img.clone(),
        3 => to_grayscale(img)?,
        _ => unreachable!("ImageBuffer allows 1 or 3 channels"),
    };
    let (h, w) = (gray.height(), gray.width());

    let m = median(gray.pixels());
    let lower = (1.0 - THRESHOLD_SIGMA) * m;
    let upper = ((1.0 + THRESHOLD_SIGMA) * m).min(1.0);

    let blurred = correlate_replicate(gray.pixels(), h, w, &gaussian5_kernel(), 5);
    let gx = correlate_replicate(&blurred, h, w, &SOBEL_X, 3);
    let gy = correlate_replicate(&blurred, h, w, &SOBEL_Y, 3);
    let mag: Vec<f32> = gx
        .iter()
        .zip(&gy)
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect();

    let thinned = non_maximum_suppression(&mag, &gx, &gy, h, w);
    let edges = hysteresis(&thinned, h, w, lower, upper);
    ImageBuffer::new(h, w, 1, edges)
}

fn median(values: &[f32]) -> f32 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("pixels are finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Keep pixels whose magnitude is not exceeded by either neighbor along the
/// quantized gradient direction. The one-pixel border is suppressed.
fn non_maximum_suppression(mag: &[f32], gx: &[f32], gy: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; h * w];
    if h < 3 || w < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            if mag[i] < MAG_FLOOR {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (n1, n2) = if !(22.5..157.5).contains(&angle) {
                (mag[i - 1], mag[i + 1])
            } else if angle < 67.5 {
                // Gradient toward down-right: compare along the diagonal.
                (mag[i - w - 1], mag[i + w + 1])
            } else if angle < 112.5 {
                (mag[i - w], mag[i + w])
            } else {
                (mag[i - w + 1], mag[i + w - 1])
            };
            let keep = mag[i] >= n1 * (1.0 - NMS_REL_TOL) && mag[i] >= n2 * (1.0 - NMS_REL_TOL);
            if keep {
                out[i] = mag[i];
            }
        }
    }
    out
}

/// Strong pixels exceed `upper`; weak pixels exceed `lower` and are promoted
/// when 8-connected to a strong pixel.
fn hysteresis(thinned: &[f32], h: usize, w: usize, lower: f32, upper: f32) -> Vec<f32> {
    let upper = upper.max(MAG_FLOOR);
    let lower = lower.min(upper);
    let mut edges = vec![0.0f32; h * w];
    let mut stack = Vec::new();
    for i in 0..h * w {
        if thinned[i] > upper {
            edges[i] = 1.0;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let y = (i / w) as isize;
        let x = (i % w) as isize;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                if dy == 0 && dx == 0 {
                    continue;
                }
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || ny >= h as isize || nx < 0 || nx >= w as isize {
                    continue;
                }
                let j = (ny * w as isize + nx) as usize;
                if edges[j] == 0.0 && thinned[j] > lower {
                    edges[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    edges
}
