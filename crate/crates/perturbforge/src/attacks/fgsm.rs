//! Fast gradient sign method.

use crate::corpus::Label;
use crate::imaging::ImageBuffer;
use crate::nn::{gradient_wrt_input, Model};

use super::AttackError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgsmConfig {
    /// L-infinity perturbation magnitude.
    pub epsilon: f32,
}

impl Default for FgsmConfig {
    fn default() -> Self {
        FgsmConfig { epsilon: 0.1 }
    }
}

/// adv = clip(x + eps * sign(grad_x loss), 0, 1).
///
/// The L-infinity distance from x never exceeds eps: where the float sum
/// rounds a hair past the budget, the pixel is nudged back by an ulp.
pub fn fgsm(
    model: &Model,
    x: &ImageBuffer,
    label: Label,
    cfg: &FgsmConfig,
) -> Result<ImageBuffer, AttackError> {
    if cfg.epsilon < 0.0 {
        return Err(AttackError::InvalidConfig(format!(
            "epsilon must be nonnegative, got {}",
            cfg.epsilon
        )));
    }
    let xt = x.to_tensor();
    let grad = gradient_wrt_input(model, &xt, label)?;
    let eps = cfg.epsilon;
    let pixels: Vec<f32> = xt
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xv, &g)| {
            let step = if g > 0.0 {
                eps
            } else if g < 0.0 {
                -eps
            } else {
                0.0
            };
            let mut v = (xv + step).clamp(0.0, 1.0);
            let mut guard = 0;
            while (v - xv).abs() > eps && guard < 4 {
                v = if v > xv { v.next_down() } else { v.next_up() };
                guard += 1;
            }
            v
        })
        .collect();
    Ok(ImageBuffer::clamped(
        x.height(),
        x.width(),
        x.channels(),
        pixels,
    )?)
}
