//! Shared test support: an independent f64 reference forward pass used as
//! the finite-difference oracle, plus helpers for building random networks.
//!
//! Everything here is deliberately written from scratch in double precision
//! with plain loops; it never calls into the engine's forward or backward
//! code, so finite differences of these functions are an independent check
//! of the engine's analytic gradients.

#![allow(dead_code)]

use perturbforge::nn::{
    forward_graph, split_params, Activation, Arch, InputMode, LayerSpec, ModelSpec,
};
use perturbforge::tensor::{Padding, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------
// f64 reference primitives
// ---------------------------------------------------------------------

pub fn ref_dense(x: &[f64], w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut out = b.to_vec();
    for i in 0..n_in {
        for o in 0..n_out {
            out[o] += x[i] * w[i * n_out + o];
        }
    }
    out
}

pub fn conv_geometry(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    same: bool,
) -> (usize, usize, isize, isize) {
    if same {
        let pad_h = kh - 1;
        let pad_w = kw - 1;
        (h, w, (pad_h / 2) as isize, (pad_w / 2) as isize)
    } else {
        (h - kh + 1, w - kw + 1, 0, 0)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ref_conv2d(
    x: &[f64],
    k: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    same: bool,
) -> (Vec<f64>, usize, usize) {
    let (oh, ow, pad_top, pad_left) = conv_geometry(h, w, kh, kw, same);
    let mut out = vec![0.0f64; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = b[co];
                for ky in 0..kh {
                    let iy = oy as isize + ky as isize - pad_top;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = ox as isize + kx as isize - pad_left;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += x[((iy as usize) * w + ix as usize) * cin + ci]
                                * k[((ky * kw + kx) * cin + ci) * cout + co];
                        }
                    }
                }
                out[(oy * ow + ox) * cout + co] = acc;
            }
        }
    }
    (out, oh, ow)
}

pub fn ref_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn ref_max_pool(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    size: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..size {
                    for kx in 0..size {
                        let v = x[((oy * stride + ky) * w + ox * stride + kx) * c + ch];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(oy * ow + ox) * c + ch] = best;
            }
        }
    }
    (out, oh, ow)
}

fn axis_plan64(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|j| {
            let s = (j as f64 + 0.5) * scale - 0.5;
            if s <= 0.0 {
                (0, 0, 1.0, 0.0)
            } else if s >= (in_len - 1) as f64 {
                (in_len - 1, in_len - 1, 1.0, 0.0)
            } else {
                let lo = s.floor() as usize;
                let w_hi = s - lo as f64;
                (lo, lo + 1, 1.0 - w_hi, w_hi)
            }
        })
        .collect()
}

pub fn ref_bilinear(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let rows = axis_plan64(h, oh);
    let cols = axis_plan64(w, ow);
    let mut out = vec![0.0f64; oh * ow * c];
    for (oy, &(y0, y1, wy0, wy1)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, wx0, wx1)) in cols.iter().enumerate() {
            for ch in 0..c {
                let v00 = x[(y0 * w + x0) * c + ch];
                let v01 = x[(y0 * w + x1) * c + ch];
                let v10 = x[(y1 * w + x0) * c + ch];
                let v11 = x[(y1 * w + x1) * c + ch];
                out[(oy * ow + ox) * c + ch] =
                    wy0 * (wx0 * v00 + wx1 * v01) + wy1 * (wx0 * v10 + wx1 * v11);
            }
        }
    }
    out
}

pub fn ref_softmax_ce(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[class]
}

pub fn ref_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn ref_correlate_replicate(
    input: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    k: usize,
) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0f64; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in 0..k as isize {
                let iy = (y + ky - r).clamp(0, h as isize - 1) as usize;
                for kx in 0..k as isize {
                    let ix = (x + kx - r).clamp(0, w as isize - 1) as usize;
                    acc += kernel[(ky * k as isize + kx) as usize] * input[iy * w + ix];
                }
            }
            out[(y * w as isize + x) as usize] = acc;
        }
    }
    out
}

fn gauss5_64() -> [f64; 25] {
    let sigma = 1.4f64;
    let mut kern = [0.0f64; 25];
    let mut sum = 0.0;
    for y in 0..5 {
        for x in 0..5 {
            let dy = y as f64 - 2.0;
            let dx = x as f64 - 2.0;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            kern[y * 5 + x] = v;
            sum += v;
        }
    }
    for v in &mut kern {
        *v /= sum;
    }
    kern
}

const SOBEL_X64: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
const SOBEL_Y64: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

fn sigmoid64(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn ref_edge_features(x: &[f64], h: usize, w: usize, threshold: f64, steepness: f64) -> Vec<f64> {
    let eps = 1e-4f64;
    let blurred = ref_correlate_replicate(x, h, w, &gauss5_64(), 5);
    let gx = ref_correlate_replicate(&blurred, h, w, &SOBEL_X64, 3);
    let gy = ref_correlate_replicate(&blurred, h, w, &SOBEL_Y64, 3);
    let zero = sigmoid64(steepness * (eps.sqrt() - threshold));
    let norm = 1.0 - zero;
    gx.iter()
        .zip(&gy)
        .map(|(&a, &b)| {
            let m = (a * a + b * b + eps).sqrt();
            ((sigmoid64(steepness * (m - threshold)) - zero) / norm).max(0.0)
        })
        .collect()
}

// ---------------------------------------------------------------------
// f64 reference evaluation of a whole ModelSpec with margins
// ---------------------------------------------------------------------

/// Loss of a classifier spec in double precision, plus the smallest margin
/// to a relu kink or a pooling-argmax tie along the way. Finite differences
/// are only trusted when the margin clears the perturbation radius.
pub fn ref_spec_loss(
    spec: &ModelSpec,
    params: &[Vec<f64>],
    x: &[f64],
    class: usize,
) -> (f64, f64) {
    let mut shape: Vec<usize> = spec.input_shape.to_vec();
    let mut data: Vec<f64> = x.to_vec();
    let mut cursor = 0;
    let mut margin = f64::INFINITY;
    for layer in &spec.layers {
        match layer {
            LayerSpec::BilinearDownscale { out_h, out_w } => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                data = ref_bilinear(&data, h, w, c, *out_h, *out_w);
                shape = vec![*out_h, *out_w, c];
            }
            LayerSpec::EdgeConcat {
                threshold,
                steepness,
            } => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let gray: Vec<f64> = if c == 3 {
                    data.chunks_exact(3)
                        .map(|p| 0.299f32 as f64 * p[0] + 0.587f32 as f64 * p[1] + 0.114f32 as f64 * p[2])
                        .collect()
                } else {
                    data.clone()
                };
                let edge = ref_edge_features(&gray, h, w, *threshold as f64, *steepness as f64);
                let mut stacked = data.clone();
                for &e in &edge {
                    for _ in 0..c {
                        stacked.push(e);
                    }
                }
                data = stacked;
                shape = vec![2 * h, w, c];
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                padding,
                activation,
            } => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let k = &params[cursor];
                let b = &params[cursor + 1];
                cursor += 2;
                let (out, oh, ow) = ref_conv2d(
                    &data,
                    k,
                    b,
                    h,
                    w,
                    c,
                    kernel[0],
                    kernel[1],
                    *filters,
                    *padding == Padding::Same,
                );
                data = out;
                shape = vec![oh, ow, *filters];
                if *activation == Activation::Relu {
                    for &v in &data {
                        margin = margin.min(v.abs());
                    }
                    data = ref_relu(&data);
                }
            }
            LayerSpec::MaxPool { size, stride } => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                // Track the gap between the top two values per window.
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            let mut second = f64::NEG_INFINITY;
                            for ky in 0..*size {
                                for kx in 0..*size {
                                    let v = data
                                        [((oy * stride + ky) * w + ox * stride + kx) * c + ch];
                                    if v > best {
                                        second = best;
                                        best = v;
                                    } else if v > second {
                                        second = v;
                                    }
                                }
                            }
                            if second.is_finite() {
                                margin = margin.min(best - second);
                            }
                        }
                    }
                }
                let (out, noh, now_) = ref_max_pool(&data, h, w, c, *size, *stride);
                data = out;
                shape = vec![noh, now_, c];
            }
            LayerSpec::Flatten => {
                shape = vec![data.len()];
            }
            LayerSpec::Dense { units, activation } => {
                let n_in = shape[0];
                let w = &params[cursor];
                let b = &params[cursor + 1];
                cursor += 2;
                data = ref_dense(&data, w, b, n_in, *units);
                shape = vec![*units];
                if *activation == Activation::Relu {
                    for &v in &data {
                        margin = margin.min(v.abs());
                    }
                    data = ref_relu(&data);
                }
            }
        }
    }
    (ref_softmax_ce(&data, class), margin)
}

// ---------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------

pub const FD_H: f64 = 1e-3;

/// Central finite difference of `f` w.r.t. coordinate `i` of `values`.
pub fn central_diff(values: &[f64], i: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mut plus = values.to_vec();
    let mut minus = values.to_vec();
    plus[i] += FD_H;
    minus[i] -= FD_H;
    (f(&plus) - f(&minus)) / (2.0 * FD_H)
}

/// Relative error with a floor tied to the gradient's dominant scale:
/// coordinates near the top of the gradient are held to a true relative
/// comparison, while coordinates orders of magnitude below it (where f32
/// accumulation noise lives) are compared against 5% of that scale.
pub fn rel_err(analytic: f64, fd: f64, grad_scale: f64) -> f64 {
    let floor = (0.05 * grad_scale).max(1e-6);
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor)
}

/// Largest |coordinate| of a gradient slice.
pub fn grad_scale(grad: &[f32]) -> f64 {
    grad.iter().map(|g| g.abs() as f64).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------
// statistics oracles
// ---------------------------------------------------------------------

/// AUC by exhaustive pair counting: P(score+ > score-) + 0.5 P(tie).
pub fn auc_pair_oracle(scores: &[f32], labels: &[bool]) -> f64 {
    let mut won = 0.0f64;
    let mut total = 0.0f64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            total += 1.0;
            if scores[i] > scores[j] {
                won += 1.0;
            } else if scores[i] == scores[j] {
                won += 0.5;
            }
        }
    }
    won / total
}

/// Exact two-sided Mann-Whitney p by direct enumeration of every label
/// assignment, midranks for ties. Independent of the library's count-based
/// recurrence and its combination walker.
pub fn mw_enumeration_oracle(a: &[f32], b: &[f32]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b.iter()).map(|&v| v as f64).collect();
    let n = pooled.len();
    let n1 = a.len();
    let ranks = {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&p, &q| pooled[p].partial_cmp(&pooled[q]).unwrap());
        let mut r = vec![0.0f64; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j < n && pooled[idx[j]] == pooled[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..j] {
                r[k] = (i + j + 1) as f64 / 2.0;
            }
            i = j;
        }
        r
    };
    let u_of = |members: &[usize]| -> f64 {
        let r1: f64 = members.iter().map(|&i| ranks[i]).sum();
        r1 - (n1 * (n1 + 1)) as f64 / 2.0
    };
    let observed = u_of(&(0..n1).collect::<Vec<_>>());

    // Recursive enumeration of all C(n, n1) member sets.
    fn walk(
        start: usize,
        remaining: usize,
        n: usize,
        members: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if remaining == 0 {
            visit(members);
            return;
        }
        for i in start..=n - remaining {
            members.push(i);
            walk(i + 1, remaining - 1, n, members, visit);
            members.pop();
        }
    }
    let (mut le, mut ge, mut total) = (0.0f64, 0.0f64, 0.0f64);
    let mut members = Vec::new();
    walk(0, n1, n, &mut members, &mut |set| {
        let u = u_of(set);
        total += 1.0;
        if u <= observed + 1e-9 {
            le += 1.0;
        }
        if u >= observed - 1e-9 {
            ge += 1.0;
        }
    });
    (observed, (2.0 * (le / total).min(ge / total)).min(1.0))
}

// ---------------------------------------------------------------------
// random conditioned networks for finite-difference sweeps
// ---------------------------------------------------------------------

/// Build a random small conv/dense classifier with parameters and an input
/// conditioned so no relu kink or pooling tie sits within the FD stencil.
pub fn random_conditioned_net(
    rng: &mut ChaCha8Rng,
) -> (ModelSpec, Vec<Vec<f64>>, Vec<f64>, usize) {
    loop {
        let h = rng.gen_range(5..8);
        let w = rng.gen_range(5..8);
        let cin = rng.gen_range(1..3);
        let filters = rng.gen_range(2..4);
        let padding = if rng.gen_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        let dense_units = rng.gen_range(3..6);
        let spec = ModelSpec {
            arch: Arch::Cnn,
            input_shape: [h, w, cin],
            input_mode: InputMode::Resize,
            class_count: 2,
            labels_inverted: false,
            layers: vec![
                LayerSpec::Conv2d {
                    filters,
                    kernel: [3, 3],
                    padding,
                    activation: Activation::Relu,
                },
                LayerSpec::MaxPool { size: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: dense_units,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 2,
                    activation: Activation::Linear,
                },
            ],
        };
        let dims = spec.infer().unwrap();
        let mut params: Vec<Vec<f64>> = Vec::new();
        for layer in &dims {
            for shape in &layer.params {
                let n: usize = shape.iter().product();
                params.push((0..n).map(|_| rng.gen_range(-0.6..0.6)).collect());
            }
        }
        let x: Vec<f64> = (0..h * w * cin).map(|_| rng.gen_range(0.05..0.95)).collect();
        let class = rng.gen_range(0..2);
        let (_, margin) = ref_spec_loss(&spec, &params, &x, class);
        if margin > 1e-2 {
            return (spec, params, x, class);
        }
    }
}

/// Max relative FD error over every parameter and input coordinate.
pub fn network_max_rel_err(
    spec: &ModelSpec,
    params64: &[Vec<f64>],
    x64: &[f64],
    class: usize,
) -> f64 {
    let params_f32: Vec<f32> = params64
        .iter()
        .flat_map(|p| p.iter().map(|&v| v as f32))
        .collect();
    let params = split_params(spec, &params_f32).unwrap();
    let x_f32: Vec<f32> = x64.iter().map(|&v| v as f32).collect();

    let mut tape = Tape::new();
    let input = tape.leaf(Tensor::new(spec.input_shape.to_vec(), x_f32).unwrap());
    let nodes = forward_graph(spec, &params, &mut tape, input).unwrap();
    let loss = tape.softmax_cross_entropy(nodes.logits, class).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    // every parameter coordinate
    for (pi, p64) in params64.iter().enumerate() {
        let node = nodes.param_nodes[pi];
        let analytic = grads.get(&tape, node).unwrap();
        let scale = grad_scale(analytic.data());
        for i in 0..p64.len() {
            let f = |vals: &[f64]| -> f64 {
                let mut all: Vec<Vec<f64>> = params64.to_vec();
                all[pi] = vals.to_vec();
                ref_spec_loss(spec, &all, x64, class).0
            };
            let fd = central_diff(p64, i, &f);
            worst = worst.max(rel_err(analytic.data()[i] as f64, fd, scale));
        }
    }
    // every input coordinate
    let analytic = grads.get(&tape, input).unwrap();
    let scale = grad_scale(analytic.data());
    for i in 0..x64.len() {
        let f = |vals: &[f64]| ref_spec_loss(spec, params64, vals, class).0;
        let fd = central_diff(x64, i, &f);
        worst = worst.max(rel_err(analytic.data()[i] as f64, fd, scale));
    }
    worst
}

// ---------------------------------------------------------------------
// canny square oracle
// ---------------------------------------------------------------------

/// Both-sided boundary ring of a filled axis-aligned square.
pub fn square_boundary_ring(size: usize, lo: usize, hi: usize) -> Vec<bool> {
    let inside = |y: usize, x: usize| (lo..hi).contains(&y) && (lo..hi).contains(&x);
    let mut ring = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let me = inside(y, x);
            for (dy, dx) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny as usize >= size || nx as usize >= size {
                    continue;
                }
                if inside(ny as usize, nx as usize) != me {
                    ring[y * size + x] = true;
                }
            }
        }
    }
    ring
}

/// IoU between Canny's detection and the analytic boundary ring.
pub fn square_edge_iou(size: usize, lo: usize, hi: usize, background: f32, fill: f32) -> f64 {
    use perturbforge::imaging::{canny_zero_param, ImageBuffer};
    let mut img = ImageBuffer::filled(size, size, 1, background);
    for y in lo..hi {
        for x in lo..hi {
            img.set(y, x, 0, fill);
        }
    }
    let edges = canny_zero_param(&img).unwrap();
    let ring = square_boundary_ring(size, lo, hi);
    let (mut intersection, mut union) = (0usize, 0usize);
    for (i, &r) in ring.iter().enumerate() {
        let detected = edges.pixels()[i] == 1.0;
        if detected || r {
            union += 1;
        }
        if detected && r {
            intersection += 1;
        }
    }
    intersection as f64 / union as f64
}
