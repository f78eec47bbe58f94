//! Builds the recorded forward pass for a model spec.

use crate::imaging::LUMA_WEIGHTS;
use crate::tensor::{NodeId, Padding, Tape, Tensor};

use super::{Activation, LayerSpec, ModelError, ModelSpec};

/// Node handles produced by one forward pass.
pub struct ForwardNodes {
    pub logits: NodeId,
    /// One node per trainable parameter tensor, in flat-weight order.
    pub param_nodes: Vec<NodeId>,
    /// Post-activation output of each conv layer, keyed by layer index.
    pub conv_activations: Vec<(usize, NodeId)>,
}

/// Record the model's forward pass from an existing input node. Parameters
/// are registered as leaves in flat-weight order; fixed stages (downscale,
/// edge concat) carry no trainable leaves.
pub fn forward_graph(
    spec: &ModelSpec,
    params: &[Tensor],
    tape: &mut Tape,
    input: NodeId,
) -> Result<ForwardNodes, ModelError> {
    let mut cursor = 0usize;
    let mut param_nodes = Vec::with_capacity(params.len());
    let mut conv_activations = Vec::new();
    let mut node = input;
    for (layer_idx, layer) in spec.layers.iter().enumerate() {
        node = match layer {
            LayerSpec::BilinearDownscale { out_h, out_w } => {
                tape.bilinear_downscale(node, *out_h, *out_w)?
            }
            LayerSpec::EdgeConcat {
                threshold,
                steepness,
            } => {
                let channels = *tape
                    .value(node)
                    .shape()
                    .last()
                    .expect("image input validated by spec");
                let gray = if channels == 3 {
                    let w = tape.leaf(Tensor::new(vec![1, 1, 3, 1], LUMA_WEIGHTS.to_vec())?);
                    let b = tape.leaf(Tensor::zeros(vec![1]));
                    tape.conv2d(node, w, b, Padding::Valid, 1)?
                } else {
                    node
                };
                let edge = tape.edge_features(gray, *threshold, *steepness)?;
                let spread = if channels == 3 {
                    let w = tape.leaf(Tensor::new(vec![1, 1, 1, 3], vec![1.0; 3])?);
                    let b = tape.leaf(Tensor::zeros(vec![3]));
                    tape.conv2d(edge, w, b, Padding::Valid, 1)?
                } else {
                    edge
                };
                tape.concat_rows(node, spread)?
            }
            LayerSpec::Conv2d {
                padding, activation, ..
            } => {
                let w = tape.leaf(params[cursor].clone());
                let b = tape.leaf(params[cursor + 1].clone());
                param_nodes.push(w);
                param_nodes.push(b);
                cursor += 2;
                let conv = tape.conv2d(node, w, b, *padding, 1)?;
                let out = apply_activation(tape, conv, *activation)?;
                conv_activations.push((layer_idx, out));
                out
            }
            LayerSpec::MaxPool { size, stride } => tape.max_pool(node, *size, *stride)?,
            LayerSpec::Flatten => tape.flatten(node)?,
            LayerSpec::Dense { activation, .. } => {
                let w = tape.leaf(params[cursor].clone());
                let b = tape.leaf(params[cursor + 1].clone());
                param_nodes.push(w);
                param_nodes.push(b);
                cursor += 2;
                let out = tape.dense(node, w, b)?;
                apply_activation(tape, out, *activation)?
            }
        };
    }
    if cursor != params.len() {
        return Err(ModelError::InvalidSpec(format!(
            "{} parameter tensors supplied, {cursor} consumed",
            params.len()
        )));
    }
    Ok(ForwardNodes {
        logits: node,
        param_nodes,
        conv_activations,
    })
}

fn apply_activation(
    tape: &mut Tape,
    node: NodeId,
    activation: Activation,
) -> Result<NodeId, ModelError> {
    Ok(match activation {
        Activation::Relu => tape.relu(node)?,
        Activation::Linear => node,
    })
}
