//! SGD-with-momentum training over a corpus manifest.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{CorpusManifest, Label, Split};
use crate::imaging::load_image;
use crate::tensor::{Tape, Tensor};

use super::{
    flatten_params, forward_graph, prepare_input, Checkpoint, LayerDims, ModelError, ModelSpec,
    TrainConfig, TrainMeta,
};

/// Inputs cached as quantized bytes; full-resolution surrogate corpora would
/// not fit in memory as f32.
struct CompactImage {
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl CompactImage {
    fn from_tensor(t: &Tensor) -> Self {
        CompactImage {
            shape: t.shape().to_vec(),
            bytes: t
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
        .expect("shape recorded at construction")
    }
}

pub(crate) struct PreparedDataset {
    images: Vec<CompactImage>,
    classes: Vec<usize>,
}

impl PreparedDataset {
    pub(crate) fn load(
        spec: &ModelSpec,
        manifest: &CorpusManifest,
        split: Split,
    ) -> Result<Self, ModelError> {
        let entries = manifest.select(Some(split), None);
        let loaded: Vec<(CompactImage, usize)> = entries
            .par_iter()
            .map(|entry| -> Result<_, ModelError> {
                let img = load_image(manifest.resolve(entry))?;
                let x = prepare_input(spec, &img)?;
                Ok((CompactImage::from_tensor(&x), spec.class_index(entry.label)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (images, classes) = loaded.into_iter().unzip();
        Ok(PreparedDataset { images, classes })
    }

    pub(crate) fn len(&self) -> usize {
        self.images.len()
    }

    fn input(&self, i: usize) -> Tensor {
        self.images[i].to_tensor()
    }

    fn class(&self, i: usize) -> usize {
        self.classes[i]
    }
}

/// He-style uniform init scaled by fan-in; biases start at zero. All draws
/// come from the seeded generator in layer order.
fn init_params(dims: &[LayerDims], rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let mut params = Vec::new();
    for layer in dims {
        for shape in &layer.params {
            let n: usize = shape.iter().product();
            if shape.len() >= 2 {
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let bound = (6.0 / fan_in as f32).sqrt();
                let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                params.push(Tensor::new(shape.clone(), data).expect("shape is valid"));
            } else {
                params.push(Tensor::zeros(shape.clone()));
            }
        }
    }
    params
}

fn example_pass(
    spec: &ModelSpec,
    params: &[Tensor],
    x: Tensor,
    class: usize,
) -> Result<(f32, Vec<Vec<f32>>), ModelError> {
    let mut tape = Tape::new();
    let input = tape.leaf(x);
    let nodes = forward_graph(spec, params, &mut tape, input)?;
    let loss = tape.softmax_cross_entropy(nodes.logits, class)?;
    let grads = tape.backward(loss)?;
    let param_grads = nodes
        .param_nodes
        .iter()
        .map(|&pn| match grads.raw(pn) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(pn).numel()],
        })
        .collect();
    Ok((tape.value(loss).item(), param_grads))
}

fn dataset_accuracy(
    spec: &ModelSpec,
    params: &[Tensor],
    data: &PreparedDataset,
) -> Result<f32, ModelError> {
    if data.len() == 0 {
        return Ok(0.0);
    }
    let correct: usize = (0..data.len())
        .into_par_iter()
        .map(|i| -> Result<usize, ModelError> {
            let mut tape = Tape::new();
            let input = tape.leaf(data.input(i));
            let nodes = forward_graph(spec, params, &mut tape, input)?;
            let logits = tape.value(nodes.logits).data();
            Ok((super::argmax(logits) == data.class(i)) as usize)
        })
        .sum::<Result<usize, _>>()?;
    Ok(correct as f32 / data.len() as f32)
}

/// Train a classifier on the manifest's train split.
///
/// Deterministic for a fixed seed: initialization, shuffling, and batch
/// gradient accumulation order are all fixed, so two runs produce identical
/// weight vectors.
pub fn train(
    spec: &ModelSpec,
    manifest: &CorpusManifest,
    cfg: &TrainConfig,
) -> Result<Checkpoint, ModelError> {
    spec.validate()?;
    cfg.validate()?;
    for label in [Label::Spam, Label::Ham] {
        if manifest.count(Some(Split::Train), Some(label)) == 0 {
            return Err(ModelError::EmptyClass {
                label,
                split: Split::Train,
            });
        }
    }
    let train_set = PreparedDataset::load(spec, manifest, Split::Train)?;
    let test_set = if manifest.count(Some(Split::Test), None) > 0 {
        Some(PreparedDataset::load(spec, manifest, Split::Test)?)
    } else {
        None
    };

    let dims = spec.infer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(&dims, &mut rng);
    let mut velocity: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f32, Vec<Vec<f32>>)> = batch
                .par_iter()
                .map(|&i| example_pass(spec, &params, train_set.input(i), train_set.class(i)))
                .collect::<Result<Vec<_>, _>>()?;
            let scale = 1.0 / batch.len() as f32;
            let mut acc: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            for (loss, grads) in &results {
                epoch_loss += *loss as f64;
                for (a, g) in acc.iter_mut().zip(grads) {
                    for (av, gv) in a.iter_mut().zip(g) {
                        *av += gv;
                    }
                }
            }
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&acc) {
                let pd = p.data_mut();
                for i in 0..pd.len() {
                    v[i] = cfg.momentum.0 * v[i] - cfg.learning_rate.0 * g[i] * scale;
                    pd[i] += v[i];
                }
            }
        }
        if !epoch_loss.is_finite() {
            return Err(ModelError::TrainingDiverged { epoch });
        }
    }

    let train_accuracy = dataset_accuracy(spec, &params, &train_set)?;
    let test_accuracy = match &test_set {
        Some(s) => Some(dataset_accuracy(spec, &params, s)?),
        None => None,
    };
    Checkpoint::new(
        spec.clone(),
        flatten_params(&params),
        TrainMeta {
            corpus_id: manifest.corpus_id.clone(),
            seed: cfg.seed,
            train_accuracy,
            test_accuracy,
        },
    )
}
