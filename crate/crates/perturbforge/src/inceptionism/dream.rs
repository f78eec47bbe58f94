//! Activation maximization (DeepDream) over a frozen model.

use crate::imaging::ImageBuffer;
use crate::nn::{forward_graph, Model};
use crate::tensor::{Tape, Tensor};

use super::InceptionismError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DreamConfig {
    pub iterations: usize,
    /// Per-iteration step, applied to the L-infinity-normalized gradient.
    pub step: f32,
}

impl Default for DreamConfig {
    fn default() -> Self {
        DreamConfig {
            iterations: 64,
            step: 0.001,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DreamOutcome {
    pub image: ImageBuffer,
    /// Set when the ascent could not start because the gradient vanished.
    pub zero_gradient: bool,
    /// Dream loss at the first and last iterate.
    pub initial_activation: f32,
    pub final_activation: f32,
}

/// Loss and input gradient for one ascent step: the summed activations of
/// the conv layer with the most parameters plus the summed output logits.
fn dream_loss_and_grad(
    model: &Model,
    x: &Tensor,
    conv_layer: usize,
) -> Result<(f32, Tensor), InceptionismError> {
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let nodes = forward_graph(&model.spec, &model.params, &mut tape, input)?;
    let conv_node = nodes
        .conv_activations
        .iter()
        .find(|(idx, _)| *idx == conv_layer)
        .map(|(_, node)| *node)
        .ok_or_else(|| {
            InceptionismError::UnsupportedModel("conv activation node missing".into())
        })?;
    let conv_sum = tape.sum(conv_node)?;
    let logit_sum = tape.sum(nodes.logits)?;
    let loss = tape.add(conv_sum, logit_sum)?;
    let grads = tape.backward(loss)?;
    let g = grads.get(&tape, input)?;
    Ok((tape.value(loss).item(), g))
}

/// Gradient-ascend the image toward higher activations:
/// x <- clip(x + step * g / ||g||_inf), for the configured iteration count.
pub fn deep_dream(
    model: &Model,
    image: &ImageBuffer,
    cfg: &DreamConfig,
) -> Result<DreamOutcome, InceptionismError> {
    let conv_layer = model.spec.largest_conv_layer().ok_or_else(|| {
        InceptionismError::UnsupportedModel(
            "dreaming needs a model with at least one conv layer".into(),
        )
    })?;
    let mut x = image.to_tensor();
    let (initial_activation, g0) = dream_loss_and_grad(model, &x, conv_layer)?;
    if cfg.iterations == 0 {
        return Ok(DreamOutcome {
            image: image.clone(),
            zero_gradient: false,
            initial_activation,
            final_activation: initial_activation,
        });
    }
    let gmax = g0.data().iter().map(|g| g.abs()).fold(0.0f32, f32::max);
    if gmax == 0.0 {
        return Ok(DreamOutcome {
            image: image.clone(),
            zero_gradient: true,
            initial_activation,
            final_activation: initial_activation,
        });
    }

    let mut grad = g0;
    let mut final_activation = initial_activation;
    for it in 0..cfg.iterations {
        let gmax = grad.data().iter().map(|g| g.abs()).fold(0.0f32, f32::max);
        if gmax == 0.0 {
            break;
        }
        let scale = cfg.step / gmax;
        let stepped: Vec<f32> = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&xv, &gv)| (xv + scale * gv).clamp(0.0, 1.0))
            .collect();
        x = Tensor::new(x.shape().to_vec(), stepped)?;
        if it + 1 < cfg.iterations {
            let (loss, g) = dream_loss_and_grad(model, &x, conv_layer)?;
            final_activation = loss;
            grad = g;
        } else {
            let (loss, _) = dream_loss_and_grad(model, &x, conv_layer)?;
            final_activation = loss;
        }
    }

    Ok(DreamOutcome {
        image: ImageBuffer::from_tensor(&x)?,
        zero_gradient: false,
        initial_activation,
        final_activation,
    })
}
