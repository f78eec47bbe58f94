//! Universal adversarial perturbation: one vector applied to every image.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Label;
use crate::imaging::ImageBuffer;
use crate::nn::{argmax, forward_graph, Model};
use crate::tensor::{Tape, Tensor};

use super::{apply_perturbation, fgsm, AttackError, FgsmConfig, PerturbationArtifact};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniversalConfig {
    /// Stop once accuracy on the fit set drops to this level.
    pub target_accuracy: f32,
    /// Maximum passes over the fit set.
    pub max_iterations: usize,
    /// L-infinity budget for the accumulated perturbation, on [0,1] pixels.
    pub xi: f32,
    /// Epsilon of the inner FGSM base attack.
    pub fgsm_epsilon: f32,
    /// Seed fixing the per-pass example order.
    pub seed: u64,
}

impl Default for UniversalConfig {
    fn default() -> Self {
        UniversalConfig {
            target_accuracy: 0.0,
            max_iterations: 250,
            xi: 64.0 / 255.0,
            fgsm_epsilon: 0.1,
            seed: 0,
        }
    }
}

impl UniversalConfig {
    fn validate(&self) -> Result<(), AttackError> {
        if !(0.0..=1.0).contains(&self.target_accuracy) {
            return Err(AttackError::InvalidConfig(
                "target accuracy must lie in [0, 1]".into(),
            ));
        }
        if self.xi < 0.0 || self.max_iterations == 0 {
            return Err(AttackError::InvalidConfig(
                "xi must be nonnegative and max_iterations positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniversalStats {
    pub passes: usize,
    /// Accuracy of the model on the fit set under the final perturbation.
    pub final_accuracy: f32,
    /// 1 - final_accuracy: fraction of the fit set now misclassified.
    pub fooling_rate: f32,
    pub reached_target: bool,
    /// ||v||_inf measured after each pass; never exceeds the budget.
    pub pass_linf: Vec<f32>,
}

fn predicted_class(model: &Model, x: &Tensor) -> Result<usize, AttackError> {
    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let nodes = forward_graph(&model.spec, &model.params, &mut tape, input)?;
    Ok(argmax(tape.value(nodes.logits).data()))
}

fn accuracy_under(
    model: &Model,
    examples: &[(ImageBuffer, Label)],
    v: &Tensor,
) -> Result<f32, AttackError> {
    let mut correct = 0usize;
    for (img, label) in examples {
        let perturbed = apply_perturbation(img, v)?;
        if predicted_class(model, &perturbed.to_tensor())? == model.spec.class_index(*label) {
            correct += 1;
        }
    }
    Ok(correct as f32 / examples.len() as f32)
}

/// Fit a single perturbation v with ||v||_inf <= xi.
///
/// Each pass visits the examples in a seeded shuffled order; every example
/// still classified correctly under v gets one FGSM step whose increment is
/// added to v before projecting back onto the budget ball. Fitting stops
/// when accuracy on the fit set reaches the target or the pass budget runs
/// out; falling short is reported in the stats, not an error.
pub fn universal_perturbation(
    model: &Model,
    examples: &[(ImageBuffer, Label)],
    cfg: &UniversalConfig,
) -> Result<(PerturbationArtifact, UniversalStats), AttackError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(AttackError::InvalidConfig(
            "universal perturbation needs a nonempty fit set".into(),
        ));
    }
    let shape = examples[0].0.to_tensor().shape().to_vec();
    let mut v = Tensor::zeros(shape.clone());
    let fgsm_cfg = FgsmConfig {
        epsilon: cfg.fgsm_epsilon,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut passes = 0;
    let mut reached_target = false;
    let mut pass_linf = Vec::new();
    let mut accuracy = accuracy_under(model, examples, &v)?;
    if accuracy <= cfg.target_accuracy {
        reached_target = true;
    }
    while !reached_target && passes < cfg.max_iterations && cfg.xi > 0.0 {
        order.shuffle(&mut rng);
        for &i in &order {
            let (img, label) = &examples[i];
            let perturbed = apply_perturbation(img, &v)?;
            if predicted_class(model, &perturbed.to_tensor())? != model.spec.class_index(*label) {
                continue;
            }
            let stepped = fgsm(model, &perturbed, *label, &fgsm_cfg)?;
            let vd = v.data_mut();
            for (j, (s, p)) in stepped.pixels().iter().zip(perturbed.pixels()).enumerate() {
                vd[j] = (vd[j] + (s - p)).clamp(-cfg.xi, cfg.xi);
            }
        }
        passes += 1;
        pass_linf.push(v.data().iter().map(|x| x.abs()).fold(0.0f32, f32::max));
        accuracy = accuracy_under(model, examples, &v)?;
        if accuracy <= cfg.target_accuracy {
            reached_target = true;
        }
    }

    let stats = UniversalStats {
        passes,
        final_accuracy: accuracy,
        fooling_rate: 1.0 - accuracy,
        reached_target,
        pass_linf,
    };
    Ok((PerturbationArtifact::new(v), stats))
}
