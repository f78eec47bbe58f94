//! Operation recording and reverse-mode gradient accumulation.

use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{self, Padding, PrimitiveOp};
use super::{Tensor, TensorError};

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a [`Tape`]. Ids are tape-scoped; using a
/// node from another tape is a lineage error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

enum NodeOp {
    Leaf,
    Primitive(PrimitiveOp),
}

struct Node {
    op: NodeOp,
    inputs: Vec<usize>,
    value: Tensor,
}

/// An append-only record of one forward computation.
///
/// Every operand of a node was produced earlier on the tape, so replaying the
/// records in order reproduces the forward pass and walking them in reverse
/// implements the chain rule.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: NodeOp, inputs: Vec<usize>, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, inputs, value });
        NodeId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, id: NodeId) -> Result<usize, TensorError> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(TensorError::ForeignNode);
        }
        Ok(id.index)
    }

    /// Register an input value (weights, images, constants).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(NodeOp::Leaf, Vec::new(), value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let idx = self.check(id).expect("node must belong to this tape");
        &self.nodes[idx].value
    }

    /// Replace a leaf's value in place (used by iterative attacks between
    /// replays). The new value must match the recorded shape.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<(), TensorError> {
        let idx = self.check(id)?;
        let node = &mut self.nodes[idx];
        if !matches!(node.op, NodeOp::Leaf) {
            return Err(TensorError::ForeignNode);
        }
        if node.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_leaf",
                detail: format!(
                    "leaf shape {:?} cannot be replaced by {:?}",
                    node.value.shape(),
                    value.shape()
                ),
            });
        }
        node.value = value;
        Ok(())
    }

    /// Record one primitive application and return the output node.
    pub fn apply(&mut self, op: PrimitiveOp, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        let mut indices = Vec::with_capacity(inputs.len());
        for id in inputs {
            indices.push(self.check(*id)?);
        }
        let operands: Vec<&Tensor> = indices.iter().map(|&i| &self.nodes[i].value).collect();
        let value = ops::forward(&op, &operands)?;
        Ok(self.push(NodeOp::Primitive(op), indices, value))
    }

    // Convenience wrappers mirroring the primitive set.

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::Dense, &[x, w, b])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        padding: Padding,
        stride: usize,
    ) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::Conv2d { padding, stride }, &[x, w, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::Relu, &[x])
    }

    pub fn max_pool(&mut self, x: NodeId, size: usize, stride: usize) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::MaxPool { size, stride }, &[x])
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::Flatten, &[x])
    }

    pub fn bilinear_downscale(
        &mut self,
        x: NodeId,
        out_h: usize,
        out_w: usize,
    ) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::BilinearDownscale { out_h, out_w }, &[x])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, class: usize) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::SoftmaxCrossEntropy { class }, &[logits])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::Sum, &[x])
    }

    pub fn scale(&mut self, x: NodeId, factor: f32) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::Scale { factor }, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::Mul, &[a, b])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::Tanh, &[x])
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.apply(PrimitiveOp::ConcatRows, &[a, b])
    }

    pub fn edge_features(
        &mut self,
        x: NodeId,
        threshold: f32,
        steepness: f32,
    ) -> Result<NodeId, TensorError> {
        self.apply(
            PrimitiveOp::EdgeFeatures {
                threshold,
                steepness,
            },
            &[x],
        )
    }

    /// Recompute every non-leaf value from the current leaf values, in
    /// recording order. Running this on unchanged leaves reproduces the
    /// original forward pass bit for bit.
    pub fn replay(&mut self) -> Result<(), TensorError> {
        for i in 0..self.nodes.len() {
            if let NodeOp::Primitive(op) = &self.nodes[i].op {
                let op = op.clone();
                let operands: Vec<&Tensor> = self.nodes[i]
                    .inputs
                    .iter()
                    .map(|&j| &self.nodes[j].value)
                    .collect();
                let value = ops::forward(&op, &operands)?;
                self.nodes[i].value = value;
            }
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Returns gradients for every node that influences the loss; leaves that
    /// do not influence it read back as zero.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let loss_idx = self.check(loss)?;
        let loss_value = &self.nodes[loss_idx].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::LossNotScalar {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss_idx] = Some(vec![1.0]);
        for i in (0..=loss_idx).rev() {
            let Some(grad_out) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if let NodeOp::Primitive(op) = &node.op {
                let operands: Vec<&Tensor> =
                    node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
                let input_grads = ops::backward(op, &operands, &node.value, &grad_out)?;
                debug_assert_eq!(input_grads.len(), node.inputs.len());
                for (&j, g) in node.inputs.iter().zip(input_grads) {
                    match &mut grads[j] {
                        Some(existing) => {
                            for (a, b) in existing.iter_mut().zip(g) {
                                *a += b;
                            }
                        }
                        slot => *slot = Some(g),
                    }
                }
            }
            grads[i] = Some(grad_out);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Gradient map produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given node; zeros if the node did not
    /// influence the loss.
    pub fn get(&self, tape: &Tape, id: NodeId) -> Result<Tensor, TensorError> {
        if id.tape != self.tape || id.tape != tape.id {
            return Err(TensorError::ForeignNode);
        }
        let idx = tape.check(id)?;
        let shape = tape.nodes[idx].value.shape().to_vec();
        match &self.grads[idx] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(shape)),
        }
    }

    /// Raw gradient data without copying, if the node was reached.
    pub fn raw(&self, id: NodeId) -> Option<&[f32]> {
        if id.tape != self.tape {
            return None;
        }
        self.grads.get(id.index).and_then(|g| g.as_deref())
    }
}
