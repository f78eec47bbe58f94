//! DeepFool, binary form: repeated projection onto the locally linearized
//! decision boundary of the logit difference.

use crate::corpus::Label;
use crate::imaging::ImageBuffer;
use crate::nn::{argmax, forward_graph, Model};
use crate::tensor::{Tape, Tensor};

use super::AttackError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeepFoolConfig {
    pub max_iterations: usize,
    pub overshoot: f32,
    /// Number of candidate class gradients; inert for binary classifiers but
    /// recorded for parity with multi-class tooling.
    pub class_gradients: usize,
    pub batch_size: usize,
}

impl Default for DeepFoolConfig {
    fn default() -> Self {
        DeepFoolConfig {
            max_iterations: 500,
            overshoot: 1e-6,
            class_gradients: 10,
            batch_size: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeepFoolOutcome {
    pub image: ImageBuffer,
    pub iterations: usize,
    pub success: bool,
}

/// Value and input gradient of f(x) = logit[spam] - logit[ham].
fn margin_and_gradient(model: &Model, x: &Tensor) -> Result<(f32, Tensor, usize), AttackError> {
    let spam_idx = model.spec.class_index(crate::corpus::Label::Spam);
    let mut selector = vec![0.0f32; 2];
    selector[spam_idx] = 1.0;
    selector[1 - spam_idx] = -1.0;

    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let nodes = forward_graph(&model.spec, &model.params, &mut tape, input)?;
    let w = tape.leaf(Tensor::new(vec![2, 1], selector)?);
    let b = tape.leaf(Tensor::zeros(vec![1]));
    let margin = tape.dense(nodes.logits, w, b)?;
    let grads = tape.backward(margin)?;
    let gx = grads.get(&tape, input)?;
    let predicted = argmax(tape.value(nodes.logits).data());
    Ok((tape.value(margin).item(), gx, predicted))
}

/// Iterate eta_i = -f(x_i) grad f / ||grad f||^2 until the label flips or the
/// iteration budget runs out; the total perturbation is scaled by
/// (1 + overshoot) and the result clipped into [0, 1].
pub fn deepfool(
    model: &Model,
    x: &ImageBuffer,
    label: Label,
    cfg: &DeepFoolConfig,
) -> Result<DeepFoolOutcome, AttackError> {
    if cfg.max_iterations == 0 || cfg.overshoot < 0.0 {
        return Err(AttackError::InvalidConfig(
            "max_iterations must be positive and overshoot nonnegative".into(),
        ));
    }
    if model.spec.class_count != 2 {
        return Err(AttackError::InvalidConfig(
            "deepfool is implemented for binary classifiers".into(),
        ));
    }
    let true_class = model.spec.class_index(label);
    let x0 = x.to_tensor();

    let (_, _, predicted) = margin_and_gradient(model, &x0)?;
    if predicted != true_class {
        return Ok(DeepFoolOutcome {
            image: x.clone(),
            iterations: 0,
            success: true,
        });
    }

    let n = x0.numel();
    let mut total = vec![0.0f32; n];
    let mut current = x0.clone();
    let mut iterations = 0;
    let mut flipped = false;
    while iterations < cfg.max_iterations {
        let (f, grad, pred) = margin_and_gradient(model, &current)?;
        if pred != true_class {
            flipped = true;
            break;
        }
        let norm_sq: f32 = grad.data().iter().map(|g| g * g).sum();
        if norm_sq == 0.0 {
            if iterations == 0 {
                return Err(AttackError::DegenerateGradient);
            }
            break;
        }
        let coeff = -f / norm_sq;
        for (t, g) in total.iter_mut().zip(grad.data()) {
            *t += coeff * g;
        }
        let stepped: Vec<f32> = x0
            .data()
            .iter()
            .zip(&total)
            .map(|(&xv, &tv)| xv + tv)
            .collect();
        current = Tensor::new(x0.shape().to_vec(), stepped)?;
        iterations += 1;
    }

    let factor = 1.0 + cfg.overshoot;
    let pixels: Vec<f32> = x0
        .data()
        .iter()
        .zip(&total)
        .map(|(&xv, &tv)| (xv + factor * tv).clamp(0.0, 1.0))
        .collect();
    let image = ImageBuffer::clamped(x.height(), x.width(), x.channels(), pixels)?;
    let success = if flipped {
        true
    } else {
        let (_, _, pred) = margin_and_gradient(model, &image.to_tensor())?;
        pred != true_class
    };
    Ok(DeepFoolOutcome {
        image,
        iterations,
        success,
    })
}
