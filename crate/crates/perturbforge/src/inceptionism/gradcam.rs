//! Gradient-weighted class activation mapping.

use crate::nn::{argmax, forward_graph, Model};
use crate::tensor::{Tape, Tensor};

use super::{CamMap, InceptionismError};

/// CAM of the top predicted class over the last conv layer's feature map:
/// each channel is weighted by the spatial mean of the class-score gradient,
/// the weighted sum is rectified, then max-normalized into [0, 1].
pub fn grad_cam(model: &Model, input: &Tensor) -> Result<CamMap, InceptionismError> {
    let conv_layer = model.spec.last_conv_layer().ok_or_else(|| {
        InceptionismError::UnsupportedModel("grad-cam needs at least one conv layer".into())
    })?;

    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let nodes = forward_graph(&model.spec, &model.params, &mut tape, x)?;
    let (_, conv_node) = *nodes
        .conv_activations
        .iter()
        .find(|(idx, _)| *idx == conv_layer)
        .expect("spec reported a conv layer");

    let logits = tape.value(nodes.logits).data().to_vec();
    let top = argmax(&logits);
    let mut selector = vec![0.0f32; logits.len()];
    selector[top] = 1.0;
    let sel = tape.leaf(Tensor::new(vec![logits.len(), 1], selector)?);
    let zb = tape.leaf(Tensor::zeros(vec![1]));
    let class_score = tape.dense(nodes.logits, sel, zb)?;

    let grads = tape.backward(class_score)?;
    let activation = tape.value(conv_node);
    let grad = grads.get(&tape, conv_node)?;
    let (h, w, channels) = match activation.shape() {
        [h, w, c] => (*h, *w, *c),
        other => {
            return Err(InceptionismError::UnsupportedModel(format!(
                "conv activation has unexpected shape {other:?}"
            )))
        }
    };

    // Channel weights: spatial mean of the gradient.
    let mut weights = vec![0.0f32; channels];
    for px in grad.data().chunks_exact(channels) {
        for (wk, &g) in weights.iter_mut().zip(px) {
            *wk += g;
        }
    }
    let spatial = (h * w) as f32;
    for wk in &mut weights {
        *wk /= spatial;
    }

    let mut values = vec![0.0f32; h * w];
    for (i, px) in activation.data().chunks_exact(channels).enumerate() {
        let s: f32 = px.iter().zip(&weights).map(|(&a, &wk)| a * wk).sum();
        values[i] = s.max(0.0);
    }
    let max = values.iter().cloned().fold(0.0f32, f32::max);
    if max > 0.0 {
        for v in &mut values {
            *v /= max;
        }
    }
    Ok(CamMap {
        height: h,
        width: w,
        values,
    })
}
