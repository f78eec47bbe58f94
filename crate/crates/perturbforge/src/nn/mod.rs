//! Classifier definitions, training, checkpointing, and inference.
//!
//! Two stacks are built here: the 64x32x3 classifiers trained on
//! Canny-concat preprocessed images, and the 400x400 surrogates that prepend
//! a fixed bilinear downscale plus an in-graph differentiable approximation
//! of that preprocessing so attacks can push gradients all the way to the
//! full-resolution input.

mod graph;
mod io;
mod train;

pub use graph::{forward_graph, ForwardNodes};
pub use io::{load_checkpoint, save_checkpoint};
pub use train::train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Label, Split};
use crate::imaging::{preprocess_concat, resize_bilinear, ImageBuffer, ImagingError};
use crate::tensor::{Padding, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("{split} split has no {label} examples")]
    EmptyClass { label: Label, split: Split },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },
    #[error("{path}: checkpoint format error: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    Cnn,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::Mlp => write!(f, "mlp"),
            Arch::Cnn => write!(f, "cnn"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

/// How raw corpus images are turned into model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Downsize to 32x32 and stack the binary Canny edge map underneath.
    CannyConcat,
    /// Bilinear-resize straight to the input shape.
    Resize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fixed (non-trainable) bilinear resampling.
    BilinearDownscale { out_h: usize, out_w: usize },
    /// Fixed differentiable stand-in for the Canny-concat preprocessing:
    /// Sobel-magnitude edge intensities squashed by a steep sigmoid, stacked
    /// under the image.
    EdgeConcat { threshold: f32, steepness: f32 },
    Conv2d {
        filters: usize,
        kernel: [usize; 2],
        padding: Padding,
        activation: Activation,
    },
    MaxPool { size: usize, stride: usize },
    Flatten,
    Dense { units: usize, activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub input_shape: [usize; 3],
    pub input_mode: InputMode,
    pub class_count: usize,
    pub labels_inverted: bool,
    pub layers: Vec<LayerSpec>,
}

/// Shapes flowing through one layer, plus its trainable parameter shapes in
/// the order they appear in the flat weight vector (weights, then bias).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDims {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: Vec<Vec<usize>>,
}

impl ModelSpec {
    /// Infer per-layer shapes, verifying that consecutive layers compose.
    pub fn infer(&self) -> Result<Vec<LayerDims>, ModelError> {
        let mut shape: Vec<usize> = self.input_shape.to_vec();
        let mut dims = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = shape.clone();
            let bad = |detail: String| {
                ModelError::InvalidSpec(format!("layer {i} ({layer:?}): {detail}"))
            };
            let (output, params): (Vec<usize>, Vec<Vec<usize>>) = match layer {
                LayerSpec::BilinearDownscale { out_h, out_w } => match shape[..] {
                    [_, _, c] => (vec![*out_h, *out_w, c], vec![]),
                    _ => return Err(bad(format!("needs an image input, got {shape:?}"))),
                },
                LayerSpec::EdgeConcat { .. } => match shape[..] {
                    [h, w, c] if c == 1 || c == 3 => (vec![2 * h, w, c], vec![]),
                    _ => return Err(bad(format!("needs a 1- or 3-channel image, got {shape:?}"))),
                },
                LayerSpec::Conv2d {
                    filters, kernel, padding, ..
                } => match shape[..] {
                    [h, w, c] => {
                        let out_hw = match padding {
                            Padding::Same => [h, w],
                            Padding::Valid => {
                                if h < kernel[0] || w < kernel[1] {
                                    return Err(bad("kernel larger than input".into()));
                                }
                                [h - kernel[0] + 1, w - kernel[1] + 1]
                            }
                        };
                        (
                            vec![out_hw[0], out_hw[1], *filters],
                            vec![vec![kernel[0], kernel[1], c, *filters], vec![*filters]],
                        )
                    }
                    _ => return Err(bad(format!("needs an image input, got {shape:?}"))),
                },
                LayerSpec::MaxPool { size, stride } => match shape[..] {
                    [h, w, c] if h >= *size && w >= *size && *stride > 0 => (
                        vec![(h - size) / stride + 1, (w - size) / stride + 1, c],
                        vec![],
                    ),
                    _ => return Err(bad(format!("window does not fit input {shape:?}"))),
                },
                LayerSpec::Flatten => (vec![shape.iter().product()], vec![]),
                LayerSpec::Dense { units, .. } => match shape[..] {
                    [n] => (vec![*units], vec![vec![n, *units], vec![*units]]),
                    _ => return Err(bad(format!("needs a flat input, got {shape:?}"))),
                },
            };
            shape = output.clone();
            dims.push(LayerDims { input, output, params });
        }
        Ok(dims)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.class_count != 2 {
            return Err(ModelError::InvalidSpec(format!(
                "binary classifiers only: class_count must be 2, got {}",
                self.class_count
            )));
        }
        let dims = self.infer()?;
        match (self.layers.last(), dims.last()) {
            (Some(LayerSpec::Dense { units, activation }), Some(last))
                if *units == self.class_count
                    && *activation == Activation::Linear
                    && last.output == vec![self.class_count] => {}
            _ => {
                return Err(ModelError::InvalidSpec(
                    "the final layer must be a linear dense layer with one logit per class".into(),
                ))
            }
        }
        let has_conv = self
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Conv2d { .. }));
        if self.arch == Arch::Cnn && !has_conv {
            return Err(ModelError::InvalidSpec(
                "a CNN spec needs at least one conv layer".into(),
            ));
        }
        if self.input_mode == InputMode::CannyConcat && self.input_shape != [64, 32, 3] {
            return Err(ModelError::InvalidSpec(
                "canny_concat preprocessing always produces 64x32x3 inputs".into(),
            ));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.infer()
            .map(|dims| {
                dims.iter()
                    .flat_map(|d| d.params.iter())
                    .map(|s| s.iter().product::<usize>())
                    .sum()
            })
            .unwrap_or(0)
    }

    /// Index of the output neuron trained to fire for `label`.
    pub fn class_index(&self, label: Label) -> usize {
        if self.labels_inverted {
            1 - label.index()
        } else {
            label.index()
        }
    }

    pub fn label_of(&self, class_index: usize) -> Label {
        let idx = if self.labels_inverted {
            1 - class_index
        } else {
            class_index
        };
        Label::from_index(idx)
    }

    /// Index of the conv layer with the most parameters, if any.
    pub fn largest_conv_layer(&self) -> Option<usize> {
        let dims = self.infer().ok()?;
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv2d { .. }))
            .max_by_key(|(i, _)| {
                dims[*i]
                    .params
                    .iter()
                    .map(|s| s.iter().product::<usize>())
                    .sum::<usize>()
            })
            .map(|(i, _)| i)
    }

    /// Index of the last conv layer, if any.
    pub fn last_conv_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv2d { .. }))
    }
}

/// The 64x32x3 classifier stacks.
pub fn build_classifier(arch: Arch, input_shape: [usize; 3]) -> ModelSpec {
    let layers = match arch {
        Arch::Mlp => vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 512,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                units: 128,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                units: 2,
                activation: Activation::Linear,
            },
        ],
        Arch::Cnn => vec![
            LayerSpec::Conv2d {
                filters: 32,
                kernel: [3, 3],
                padding: Padding::Same,
                activation: Activation::Relu,
            },
            LayerSpec::MaxPool { size: 2, stride: 2 },
            LayerSpec::Conv2d {
                filters: 64,
                kernel: [3, 3],
                padding: Padding::Same,
                activation: Activation::Relu,
            },
            LayerSpec::MaxPool { size: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 128,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                units: 2,
                activation: Activation::Linear,
            },
        ],
    };
    ModelSpec {
        arch,
        input_shape,
        input_mode: InputMode::CannyConcat,
        class_count: 2,
        labels_inverted: false,
        layers,
    }
}

pub const SURROGATE_INPUT: [usize; 3] = [400, 400, 3];
pub const EDGE_THRESHOLD: f32 = 1.0;
pub const EDGE_STEEPNESS: f32 = 10.0;

/// The 400x400 models: a fixed downscale plus edge-concat front end feeding
/// the ordinary classifier stack. The front end has no trainable weights, so
/// the parameter count equals the classifier's.
pub fn build_surrogate(arch: Arch) -> ModelSpec {
    let mut layers = vec![
        LayerSpec::BilinearDownscale { out_h: 32, out_w: 32 },
        LayerSpec::EdgeConcat {
            threshold: EDGE_THRESHOLD,
            steepness: EDGE_STEEPNESS,
        },
    ];
    layers.extend(build_classifier(arch, [64, 32, 3]).layers);
    ModelSpec {
        arch,
        input_shape: SURROGATE_INPUT,
        input_mode: InputMode::Resize,
        class_count: 2,
        labels_inverted: false,
        layers,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub corpus_id: String,
    pub seed: u64,
    pub train_accuracy: f32,
    pub test_accuracy: Option<f32>,
}

/// A model spec plus its trained flat weight vector.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub weights: Vec<f32>,
    pub meta: TrainMeta,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, weights: Vec<f32>, meta: TrainMeta) -> Result<Self, ModelError> {
        let expected = spec.parameter_count();
        if weights.len() != expected {
            return Err(ModelError::InvalidSpec(format!(
                "weight vector has {} values, spec needs {expected}",
                weights.len()
            )));
        }
        Ok(Checkpoint { spec, weights, meta })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: OrderedF32,
    pub momentum: OrderedF32,
    pub seed: u64,
}

/// f32 wrapper so configs can derive Eq for CLI round-trips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderedF32(pub f32);

impl Eq for OrderedF32 {}

impl From<f32> for OrderedF32 {
    fn from(v: f32) -> Self {
        OrderedF32(v)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: OrderedF32(0.01),
            momentum: OrderedF32(0.9),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidSpec(
                "epochs and batch size must be positive".into(),
            ));
        }
        if self.learning_rate.0 <= 0.0 {
            return Err(ModelError::InvalidSpec("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum.0) {
            return Err(ModelError::InvalidSpec("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A checkpoint unpacked into per-layer parameter tensors, for repeated
/// inference or gradient work without re-slicing the flat vector.
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
}

impl Model {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        Ok(Model {
            spec: ckpt.spec.clone(),
            params: split_params(&ckpt.spec, &ckpt.weights)?,
        })
    }

    /// Forward pass on a prepared input tensor: winning class index plus
    /// softmax scores.
    pub fn predict(&self, x: &Tensor) -> Result<(usize, Vec<f32>), ModelError> {
        if x.shape() != self.spec.input_shape {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "predict",
                detail: format!(
                    "input shape {:?} does not match model input {:?}",
                    x.shape(),
                    self.spec.input_shape
                ),
            }));
        }
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone());
        let nodes = forward_graph(&self.spec, &self.params, &mut tape, input)?;
        let logits = tape.value(nodes.logits).data().to_vec();
        let scores = softmax_scores(&logits);
        let label = argmax(&scores);
        Ok((label, scores))
    }

    /// Predict on a corpus image, applying the model's input preprocessing.
    pub fn predict_image(&self, img: &ImageBuffer) -> Result<(usize, Vec<f32>), ModelError> {
        let x = prepare_input(&self.spec, img)?;
        self.predict(&x)
    }
}

/// Gradient of the training loss w.r.t. the input pixels, for a frozen
/// model: the quantity every gradient-based attack starts from. Model
/// weights are untouched.
pub fn gradient_wrt_input(model: &Model, x: &Tensor, label: Label) -> Result<Tensor, ModelError> {
    let class = model.spec.class_index(label);
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone().with_requires_grad());
    let nodes = forward_graph(&model.spec, &model.params, &mut tape, input)?;
    let loss = tape.softmax_cross_entropy(nodes.logits, class)?;
    let grads = tape.backward(loss)?;
    Ok(grads.get(&tape, input)?)
}

/// Convenience wrapper over [`Model::predict`] for one-off calls.
pub fn predict(ckpt: &Checkpoint, x: &Tensor) -> Result<(usize, Vec<f32>), ModelError> {
    Model::from_checkpoint(ckpt)?.predict(x)
}

/// Numerically stable softmax over raw logits.
pub fn softmax_scores(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Slice a flat weight vector into per-layer tensors (weights then bias per
/// trainable layer).
pub fn split_params(spec: &ModelSpec, weights: &[f32]) -> Result<Vec<Tensor>, ModelError> {
    let dims = spec.infer()?;
    let mut params = Vec::new();
    let mut offset = 0;
    for d in &dims {
        for shape in &d.params {
            let n: usize = shape.iter().product();
            if offset + n > weights.len() {
                return Err(ModelError::InvalidSpec(format!(
                    "weight vector too short: need {} values",
                    spec.parameter_count()
                )));
            }
            params.push(Tensor::new(shape.clone(), weights[offset..offset + n].to_vec())?);
            offset += n;
        }
    }
    if offset != weights.len() {
        return Err(ModelError::InvalidSpec(format!(
            "weight vector has {} extra values",
            weights.len() - offset
        )));
    }
    Ok(params)
}

/// Concatenate per-layer tensors back into a flat weight vector.
pub fn flatten_params(params: &[Tensor]) -> Vec<f32> {
    let mut out = Vec::with_capacity(params.iter().map(|p| p.numel()).sum());
    for p in params {
        out.extend_from_slice(p.data());
    }
    out
}

/// Convert a corpus image into a model input per the spec's input mode.
pub fn prepare_input(spec: &ModelSpec, img: &ImageBuffer) -> Result<Tensor, ModelError> {
    let [h, w, c] = spec.input_shape;
    let rgb;
    let needs_rgb = c == 3 || spec.input_mode == InputMode::CannyConcat;
    let img = if img.channels() == 1 && needs_rgb {
        let mut pixels = Vec::with_capacity(img.pixels().len() * 3);
        for &v in img.pixels() {
            pixels.extend_from_slice(&[v, v, v]);
        }
        rgb = ImageBuffer::new(img.height(), img.width(), 3, pixels)?;
        &rgb
    } else {
        img
    };
    let prepared = match spec.input_mode {
        InputMode::CannyConcat => preprocess_concat(img)?,
        InputMode::Resize => {
            let resized = if img.height() == h && img.width() == w {
                img.clone()
            } else {
                resize_bilinear(img, h, w)?
            };
            if resized.channels() == 3 && c == 1 {
                crate::imaging::to_grayscale(&resized)?
            } else {
                resized
            }
        }
    };
    if prepared.channels() != c {
        return Err(ModelError::InvalidSpec(format!(
            "image with {} channels cannot feed a {c}-channel model",
            prepared.channels()
        )));
    }
    Ok(prepared.to_tensor())
}
