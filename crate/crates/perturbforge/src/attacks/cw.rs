//! Carlini & Wagner L2 attack.
//!
//! The box constraint is enforced by optimizing in tanh space
//! (x' = (tanh(w) + 1) / 2), so every iterate is a valid image. The
//! trade-off constant c is tuned by binary search, keeping the successful
//! adversarial example with the smallest squared distance.

use crate::corpus::Label;
use crate::imaging::ImageBuffer;
use crate::nn::{forward_graph, Model};
use crate::tensor::{Tape, Tensor};

use super::AttackError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwConfig {
    pub confidence: f32,
    pub learning_rate: f32,
    pub binary_search_steps: usize,
    pub max_iterations: usize,
    pub initial_tradeoff: f32,
    pub batch_size: usize,
}

impl Default for CwConfig {
    fn default() -> Self {
        CwConfig {
            confidence: 0.0,
            learning_rate: 0.001,
            binary_search_steps: 20,
            max_iterations: 250,
            initial_tradeoff: 100.0,
            batch_size: 1,
        }
    }
}

impl CwConfig {
    fn validate(&self) -> Result<(), AttackError> {
        if self.confidence < 0.0 || self.learning_rate <= 0.0 || self.initial_tradeoff < 0.0 {
            return Err(AttackError::InvalidConfig(
                "confidence and trade-off must be nonnegative, learning rate positive".into(),
            ));
        }
        if self.binary_search_steps == 0 || self.max_iterations == 0 {
            return Err(AttackError::InvalidConfig(
                "binary search steps and iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CwOutcome {
    pub image: ImageBuffer,
    pub success: bool,
    /// Trade-off constant of the best successful run, if any.
    pub best_c: Option<f32>,
    /// Squared L2 distance (on [0,1] pixels) of the returned image.
    pub distance_sq: f32,
    /// (c, run succeeded) per binary search step, in order.
    pub c_history: Vec<(f32, bool)>,
}

fn atanh_clamped(v: f32) -> f32 {
    let v = v.clamp(1e-6, 1.0 - 1e-6) * 2.0 - 1.0;
    0.5 * ((1.0 + v) / (1.0 - v)).ln()
}

struct RunResult {
    success: bool,
    best_pixels: Option<Vec<f32>>,
    best_dist: f32,
}

/// One optimization run at fixed c: Adam over w for max_iterations, keeping
/// the closest successful iterate.
fn optimize_run(
    model: &Model,
    x0: &Tensor,
    true_class: usize,
    c: f32,
    cfg: &CwConfig,
) -> Result<RunResult, AttackError> {
    let n = x0.numel();
    let mut w: Vec<f32> = x0.data().iter().map(|&v| atanh_clamped(v)).collect();
    let mut m = vec![0.0f32; n];
    let mut vv = vec![0.0f32; n];
    let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);

    let mut selector = vec![0.0f32; 2];
    selector[true_class] = 1.0;
    selector[1 - true_class] = -1.0;

    let mut best_dist = f32::INFINITY;
    let mut best_pixels: Option<Vec<f32>> = None;

    for it in 0..cfg.max_iterations {
        let mut tape = Tape::new();
        let w_node = tape.leaf(Tensor::new(x0.shape().to_vec(), w.clone())?);
        let x0_node = tape.leaf(x0.clone());
        let th = tape.tanh(w_node)?;
        let ones = tape.leaf(Tensor::filled(x0.shape().to_vec(), 1.0));
        let shifted = tape.add(th, ones)?;
        let x_adv = tape.scale(shifted, 0.5)?;

        let neg_x0 = tape.scale(x0_node, -1.0)?;
        let delta = tape.add(x_adv, neg_x0)?;
        let delta_sq = tape.mul(delta, delta)?;
        let dist = tape.sum(delta_sq)?;

        let nodes = forward_graph(&model.spec, &model.params, &mut tape, x_adv)?;
        let sel = tape.leaf(Tensor::new(vec![2, 1], selector.clone())?);
        let zb = tape.leaf(Tensor::zeros(vec![1]));
        let margin = tape.dense(nodes.logits, sel, zb)?;
        // f = max(z_true - z_other + confidence, 0)
        let shifted_margin = if cfg.confidence != 0.0 {
            let k = tape.leaf(Tensor::scalar(cfg.confidence));
            tape.add(margin, k)?
        } else {
            margin
        };
        let hinge = tape.relu(shifted_margin)?;
        let weighted = tape.scale(hinge, c)?;
        let objective = tape.add(dist, weighted)?;

        let margin_value = tape.value(margin).item();
        if margin_value <= -cfg.confidence {
            let d = tape.value(dist).item();
            if d < best_dist {
                best_dist = d;
                best_pixels = Some(tape.value(x_adv).data().to_vec());
            }
        }

        if it + 1 == cfg.max_iterations {
            break;
        }
        let grads = tape.backward(objective)?;
        let gw = grads
            .raw(w_node)
            .ok_or(AttackError::DegenerateGradient)?;
        let t = (it + 1) as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * gw[i];
            vv[i] = b2 * vv[i] + (1.0 - b2) * gw[i] * gw[i];
            let mhat = m[i] / bc1;
            let vhat = vv[i] / bc2;
            w[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(RunResult {
        success: best_pixels.is_some(),
        best_pixels,
        best_dist,
    })
}

/// The full attack: binary search over c (halving on success, doubling while
/// no upper bound exists), returning the smallest-distance success or a
/// failure-flagged copy of the input.
pub fn cw_l2(
    model: &Model,
    x: &ImageBuffer,
    label: Label,
    cfg: &CwConfig,
) -> Result<CwOutcome, AttackError> {
    cfg.validate()?;
    let true_class = model.spec.class_index(label);
    let x0 = x.to_tensor();

    let mut lower = 0.0f32;
    let mut upper = f32::INFINITY;
    let mut c = cfg.initial_tradeoff;
    let mut c_history = Vec::with_capacity(cfg.binary_search_steps);
    let mut best: Option<(Vec<f32>, f32, f32)> = None; // pixels, dist, c

    for _ in 0..cfg.binary_search_steps {
        let run = optimize_run(model, &x0, true_class, c, cfg)?;
        c_history.push((c, run.success));
        if run.success {
            if best.as_ref().is_none_or(|(_, d, _)| run.best_dist < *d) {
                best = Some((run.best_pixels.unwrap(), run.best_dist, c));
            }
            upper = c;
            c = 0.5 * (lower + upper);
        } else {
            lower = c;
            c = if upper.is_finite() {
                0.5 * (lower + upper)
            } else {
                c * 10.0
            };
        }
    }

    match best {
        Some((pixels, dist, best_c)) => Ok(CwOutcome {
            image: ImageBuffer::clamped(x.height(), x.width(), x.channels(), pixels)?,
            success: true,
            best_c: Some(best_c),
            distance_sq: dist,
            c_history,
        }),
        None => Ok(CwOutcome {
            image: x.clone(),
            success: false,
            best_c: None,
            distance_sq: 0.0,
            c_history,
        }),
    }
}
