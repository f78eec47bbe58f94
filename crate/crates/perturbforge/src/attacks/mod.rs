//! The four evaluated adversarial attacks and the transfer protocol.
//!
//! Attacks run against the 400x400 surrogate models; the resulting images
//! are then preprocessed exactly like clean data and scored on the 64x32x3
//! base models to measure transfer.

mod artifact;
mod cw;
mod deepfool;
mod fgsm;
mod report;
mod transfer;
mod universal;

pub use artifact::PerturbationArtifact;
pub use cw::{cw_l2, CwConfig, CwOutcome};
pub use deepfool::{deepfool, DeepFoolConfig, DeepFoolOutcome};
pub use fgsm::{fgsm, FgsmConfig};
pub use report::{AttackAggregates, AttackReport, ExampleRecord};
pub use transfer::{run_transfer_evaluation, TransferExample};
pub use universal::{universal_perturbation, UniversalConfig, UniversalStats};

use std::path::PathBuf;

use thiserror::Error;

use crate::imaging::{ImageBuffer, ImagingError};
use crate::nn::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("degenerate gradient: the classifier is flat at the input")]
    DegenerateGradient,
    #[error("{path}: report error: {detail}")]
    Report { path: PathBuf, detail: String },
}

impl From<TensorError> for AttackError {
    fn from(e: TensorError) -> Self {
        AttackError::Model(ModelError::Tensor(e))
    }
}

impl From<crate::evaluation::EvalError> for AttackError {
    fn from(e: crate::evaluation::EvalError) -> Self {
        match e {
            crate::evaluation::EvalError::Model(m) => AttackError::Model(m),
            crate::evaluation::EvalError::Imaging(i) => AttackError::Imaging(i),
            other => AttackError::InvalidConfig(other.to_string()),
        }
    }
}

/// clip(x + v, 0, 1) as an image; shapes must match.
pub fn apply_perturbation(x: &ImageBuffer, v: &crate::tensor::Tensor) -> Result<ImageBuffer, AttackError> {
    let xt = x.to_tensor();
    if xt.shape() != v.shape() {
        return Err(AttackError::Model(ModelError::Tensor(
            TensorError::ShapeMismatch {
                op: "apply_perturbation",
                detail: format!("image {:?} vs perturbation {:?}", xt.shape(), v.shape()),
            },
        )));
    }
    let pixels: Vec<f32> = xt
        .data()
        .iter()
        .zip(v.data())
        .map(|(&a, &b)| (a + b).clamp(0.0, 1.0))
        .collect();
    Ok(ImageBuffer::clamped(x.height(), x.width(), x.channels(), pixels)?)
}
