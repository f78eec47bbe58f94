//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! Tensors are flat row-major `f32` buffers with a shape vector. A [`Tape`]
//! records primitive applications during a forward pass and replays them in
//! reverse to produce gradients for every leaf. The primitive set is just
//! large enough for small MLP/CNN classifiers, input-gradient extraction, and
//! the in-graph losses the attacks need.

mod ops;
mod tape;

pub use ops::{bilinear_axis_plan, Padding, PrimitiveOp};
pub use tape::{Gradients, NodeId, Tape};

/// Internal kernels shared with the Canny implementation so both edge paths
/// blur and differentiate identically.
pub(crate) mod ops_internal {
    pub(crate) use super::ops::{correlate_replicate, gaussian5_kernel, SOBEL_X, SOBEL_Y};
}

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("tensor shape {shape:?} implies {expected} values, got {len}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        len: usize,
    },
    #[error("tensor shapes must have positive dimensions, got {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },
    #[error("backpropagation needs a scalar loss, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },
    #[error("node was not recorded on this tape")]
    ForeignNode,
}

/// Dense n-dimensional f32 array, row-major.
///
/// Data is reference counted so that cloning a tensor onto a tape (e.g. model
/// weights reused for every training example) does not copy the buffer.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f32>>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![0.0; n]),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![value; n]),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access; copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut Vec<f32> {
        Arc::make_mut(&mut self.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f32>>) {
        if let Some(g) = &grad {
            assert_eq!(g.len(), self.numel(), "gradient length must match data");
        }
        self.grad = grad;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() requires a single-element tensor");
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum absolute difference to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && *self.data == *other.data
    }
}
