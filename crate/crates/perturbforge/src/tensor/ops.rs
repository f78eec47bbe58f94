//! Forward and backward implementations for the tape primitives.

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

/// Spatial padding for `conv2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

/// A recordable primitive together with its non-tensor parameters.
///
/// Images are HWC row-major; convolution kernels are `[kh, kw, in_c, out_c]`.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveOp {
    /// inputs: x `[in]`, w `[in, out]`, b `[out]`
    Dense,
    /// inputs: x `[h, w, cin]`, w `[kh, kw, cin, cout]`, b `[cout]`
    Conv2d { padding: Padding, stride: usize },
    Relu,
    /// Non-overlapping windows use size == stride; output dims floor.
    MaxPool { size: usize, stride: usize },
    Flatten,
    /// Fixed-weight bilinear resampling (half-pixel centers), differentiable.
    BilinearDownscale { out_h: usize, out_w: usize },
    /// inputs: logits `[k]`; scalar loss for the given class index.
    SoftmaxCrossEntropy { class: usize },
    Sum,
    Scale { factor: f32 },
    Add,
    Mul,
    Tanh,
    /// Stack two HWC tensors along the row axis.
    ConcatRows,
    /// Smooth edge-intensity map on a single-channel image: 5x5 Gaussian blur
    /// (sigma 1.4), Sobel magnitude, then a rescaled sigmoid threshold that
    /// maps zero gradient to exactly zero.
    EdgeFeatures { threshold: f32, steepness: f32 },
}

impl PrimitiveOp {
    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveOp::Dense => "dense",
            PrimitiveOp::Conv2d { .. } => "conv2d",
            PrimitiveOp::Relu => "relu",
            PrimitiveOp::MaxPool { .. } => "max_pool",
            PrimitiveOp::Flatten => "flatten",
            PrimitiveOp::BilinearDownscale { .. } => "bilinear_downscale",
            PrimitiveOp::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            PrimitiveOp::Sum => "sum",
            PrimitiveOp::Scale { .. } => "scale",
            PrimitiveOp::Add => "add",
            PrimitiveOp::Mul => "mul",
            PrimitiveOp::Tanh => "tanh",
            PrimitiveOp::ConcatRows => "concat_rows",
            PrimitiveOp::EdgeFeatures { .. } => "edge_features",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            PrimitiveOp::Dense | PrimitiveOp::Conv2d { .. } => 3,
            PrimitiveOp::Add | PrimitiveOp::Mul | PrimitiveOp::ConcatRows => 2,
            _ => 1,
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

fn hwc(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    match t.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(shape_err(op, format!("expected [h, w, c], got {other:?}"))),
    }
}

/// Per-axis bilinear sampling plan with half-pixel centers and edge clamping.
///
/// Returns `(lo, hi, w_lo, w_hi)` per output index. Shared by the tensor
/// primitive and the image resizer so both resample identically.
pub fn bilinear_axis_plan(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32, f32)> {
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
                let w_hi = (s - lo as f64) as f32;
                (lo, lo + 1, 1.0 - w_hi, w_hi)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

pub(super) fn forward(op: &PrimitiveOp, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    if inputs.len() != op.arity() {
        return Err(shape_err(
            op.name(),
            format!("expected {} inputs, got {}", op.arity(), inputs.len()),
        ));
    }
    let out = match op {
        PrimitiveOp::Dense => dense_forward(inputs[0], inputs[1], inputs[2])?,
        PrimitiveOp::Conv2d { padding, stride } => {
            conv2d_forward(inputs[0], inputs[1], inputs[2], *padding, *stride)?
        }
        PrimitiveOp::Relu => Tensor::new(
            inputs[0].shape().to_vec(),
            inputs[0].data().iter().map(|&v| v.max(0.0)).collect(),
        )?,
        PrimitiveOp::MaxPool { size, stride } => max_pool_forward(inputs[0], *size, *stride)?,
        PrimitiveOp::Flatten => Tensor::new(vec![inputs[0].numel()], inputs[0].data().to_vec())?,
        PrimitiveOp::BilinearDownscale { out_h, out_w } => {
            bilinear_forward(inputs[0], *out_h, *out_w)?
        }
        PrimitiveOp::SoftmaxCrossEntropy { class } => sce_forward(inputs[0], *class)?,
        PrimitiveOp::Sum => Tensor::scalar(inputs[0].data().iter().sum()),
        PrimitiveOp::Scale { factor } => Tensor::new(
            inputs[0].shape().to_vec(),
            inputs[0].data().iter().map(|&v| v * factor).collect(),
        )?,
        PrimitiveOp::Add => elementwise(op.name(), inputs[0], inputs[1], |a, b| a + b)?,
        PrimitiveOp::Mul => elementwise(op.name(), inputs[0], inputs[1], |a, b| a * b)?,
        PrimitiveOp::Tanh => Tensor::new(
            inputs[0].shape().to_vec(),
            inputs[0].data().iter().map(|&v| v.tanh()).collect(),
        )?,
        PrimitiveOp::ConcatRows => concat_rows_forward(inputs[0], inputs[1])?,
        PrimitiveOp::EdgeFeatures {
            threshold,
            steepness,
        } => edge_features_forward(inputs[0], *threshold, *steepness)?.out,
    };
    if !out.all_finite() {
        return Err(TensorError::NonFinite { op: op.name() });
    }
    Ok(out)
}

fn elementwise(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor, TensorError> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("operand shapes {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (n_in, n_out) = match w.shape() {
        [i, o] => (*i, *o),
        other => {
            return Err(shape_err(
                "dense",
                format!("weight must be [in, out], got {other:?}"),
            ))
        }
    };
    if x.numel() != n_in || x.shape().len() != 1 {
        return Err(shape_err(
            "dense",
            format!("input shape {:?} does not match weight rows {n_in}", x.shape()),
        ));
    }
    if b.shape() != [n_out] {
        return Err(shape_err(
            "dense",
            format!("bias shape {:?} does not match {n_out} outputs", b.shape()),
        ));
    }
    let xd = x.data();
    let wd = w.data();
    let mut out = b.data().to_vec();
    for (i, &xv) in xd.iter().enumerate() {
        let row = &wd[i * n_out..(i + 1) * n_out];
        for (o, acc) in out.iter_mut().enumerate() {
            *acc += xv * row[o];
        }
    }
    Tensor::new(vec![n_out], out)
}

fn conv2d_geometry(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    padding: Padding,
    stride: usize,
) -> Result<(usize, usize, isize, isize), TensorError> {
    match padding {
        Padding::Valid => {
            if h < kh || w < kw {
                return Err(shape_err(
                    "conv2d",
                    format!("input {h}x{w} smaller than kernel {kh}x{kw} with valid padding"),
                ));
            }
            Ok(((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0))
        }
        Padding::Same => {
            let oh = h.div_ceil(stride);
            let ow = w.div_ceil(stride);
            let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
            let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
            Ok((oh, ow, (pad_h / 2) as isize, (pad_w / 2) as isize))
        }
    }
}

fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    padding: Padding,
    stride: usize,
) -> Result<Tensor, TensorError> {
    let (h, wd_, cin) = hwc("conv2d", x)?;
    let (kh, kw, wcin, cout) = match w.shape() {
        [a, b_, c, d] => (*a, *b_, *c, *d),
        other => {
            return Err(shape_err(
                "conv2d",
                format!("kernel must be [kh, kw, cin, cout], got {other:?}"),
            ))
        }
    };
    if wcin != cin {
        return Err(shape_err(
            "conv2d",
            format!("kernel expects {wcin} input channels, image has {cin}"),
        ));
    }
    if b.shape() != [cout] {
        return Err(shape_err(
            "conv2d",
            format!("bias shape {:?} does not match {cout} filters", b.shape()),
        ));
    }
    let (oh, ow, pad_top, pad_left) = conv2d_geometry(h, wd_, kh, kw, padding, stride)?;
    let xd = x.data();
    let kd = w.data();
    let bias = b.data();
    let mut out = vec![0.0f32; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let opix = &mut out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            opix.copy_from_slice(bias);
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad_top;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad_left;
                    if ix < 0 || ix >= wd_ as isize {
                        continue;
                    }
                    let xpix = &xd[((iy as usize) * wd_ + ix as usize) * cin..][..cin];
                    let krow = &kd[(ky * kw + kx) * cin * cout..][..cin * cout];
                    for (ci, &xv) in xpix.iter().enumerate() {
                        let kr = &krow[ci * cout..][..cout];
                        for (o, acc) in opix.iter_mut().enumerate() {
                            *acc += xv * kr[o];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, cout], out)
}

fn max_pool_forward(x: &Tensor, size: usize, stride: usize) -> Result<Tensor, TensorError> {
    let (h, w, c) = hwc("max_pool", x)?;
    if size == 0 || stride == 0 || h < size || w < size {
        return Err(shape_err(
            "max_pool",
            format!("window {size} stride {stride} does not fit input {h}x{w}"),
        ));
    }
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let xd = x.data();
    let mut out = vec![f32::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let opix = &mut out[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for ky in 0..size {
                for kx in 0..size {
                    let xpix = &xd[((oy * stride + ky) * w + ox * stride + kx) * c..][..c];
                    for (ch, acc) in opix.iter_mut().enumerate() {
                        if xpix[ch] > *acc {
                            *acc = xpix[ch];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

fn bilinear_forward(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, TensorError> {
    let (h, w, c) = hwc("bilinear_downscale", x)?;
    if out_h == 0 || out_w == 0 {
        return Err(shape_err("bilinear_downscale", "output dims must be positive".into()));
    }
    let rows = bilinear_axis_plan(h, out_h);
    let cols = bilinear_axis_plan(w, out_w);
    let xd = x.data();
    let mut out = vec![0.0f32; out_h * out_w * c];
    for (oy, &(y0, y1, wy0, wy1)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, wx0, wx1)) in cols.iter().enumerate() {
            let opix = &mut out[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
            for (ch, acc) in opix.iter_mut().enumerate() {
                let v00 = xd[(y0 * w + x0) * c + ch];
                let v01 = xd[(y0 * w + x1) * c + ch];
                let v10 = xd[(y1 * w + x0) * c + ch];
                let v11 = xd[(y1 * w + x1) * c + ch];
                *acc = wy0 * (wx0 * v00 + wx1 * v01) + wy1 * (wx0 * v10 + wx1 * v11);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

pub(super) fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn sce_forward(logits: &Tensor, class: usize) -> Result<Tensor, TensorError> {
    if logits.shape().len() != 1 {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("logits must be rank 1, got {:?}", logits.shape()),
        ));
    }
    let k = logits.numel();
    if class >= k {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("class index {class} out of range for {k} logits"),
        ));
    }
    let z = logits.data();
    let max = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let log_sum: f32 = z.iter().map(|&v| (v - max).exp()).sum::<f32>().ln() + max;
    Ok(Tensor::scalar(log_sum - z[class]))
}

fn concat_rows_forward(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (ha, wa, ca) = hwc("concat_rows", a)?;
    let (hb, wb, cb) = hwc("concat_rows", b)?;
    if wa != wb || ca != cb {
        return Err(shape_err(
            "concat_rows",
            format!("row/channel dims differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Vec::with_capacity((ha + hb) * wa * ca);
    out.extend_from_slice(a.data());
    out.extend_from_slice(b.data());
    Tensor::new(vec![ha + hb, wa, ca], out)
}

// ---------------------------------------------------------------------------
// edge features (fused Gaussian blur + Sobel magnitude + smooth threshold)
// ---------------------------------------------------------------------------

const GAUSS_SIGMA: f32 = 1.4;
const MAG_EPS: f32 = 1e-4;

pub(crate) fn gaussian5_kernel() -> [f32; 25] {
    let mut k = [0.0f32; 25];
    let s2 = 2.0 * GAUSS_SIGMA * GAUSS_SIGMA;
    let mut sum = 0.0;
    for y in 0..5 {
        for x in 0..5 {
            let dy = y as f32 - 2.0;
            let dx = x as f32 - 2.0;
            let v = (-(dx * dx + dy * dy) / s2).exp();
            k[y * 5 + x] = v;
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

pub(crate) const SOBEL_X: [f32; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
pub(crate) const SOBEL_Y: [f32; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

/// Correlate a single-channel image with a k x k kernel, replicating edges.
pub(crate) fn correlate_replicate(
    input: &[f32],
    h: usize,
    w: usize,
    kernel: &[f32],
    k: usize,
) -> Vec<f32> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0f32; h * w];
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

/// Adjoint of `correlate_replicate`: scatters an upstream gradient back
/// through the same clamped index map.
fn correlate_replicate_adjoint(
    grad_out: &[f32],
    h: usize,
    w: usize,
    kernel: &[f32],
    k: usize,
) -> Vec<f32> {
    let r = (k / 2) as isize;
    let mut grad_in = vec![0.0f32; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let g = grad_out[(y * w as isize + x) as usize];
            if g == 0.0 {
                continue;
            }
            for ky in 0..k as isize {
                let iy = (y + ky - r).clamp(0, h as isize - 1) as usize;
                for kx in 0..k as isize {
                    let ix = (x + kx - r).clamp(0, w as isize - 1) as usize;
                    grad_in[iy * w + ix] += kernel[(ky * k as isize + kx) as usize] * g;
                }
            }
        }
    }
    grad_in
}

struct EdgeIntermediates {
    out: Tensor,
    gx: Vec<f32>,
    gy: Vec<f32>,
    mag: Vec<f32>,
    raw_sig: Vec<f32>,
}

fn edge_features_forward(
    x: &Tensor,
    threshold: f32,
    steepness: f32,
) -> Result<EdgeIntermediates, TensorError> {
    let (h, w, c) = hwc("edge_features", x)?;
    if c != 1 {
        return Err(shape_err(
            "edge_features",
            format!("expected a single-channel image, got {c} channels"),
        ));
    }
    let gauss = gaussian5_kernel();
    let blurred = correlate_replicate(x.data(), h, w, &gauss, 5);
    let gx = correlate_replicate(&blurred, h, w, &SOBEL_X, 3);
    let gy = correlate_replicate(&blurred, h, w, &SOBEL_Y, 3);
    let mag: Vec<f32> = gx
        .iter()
        .zip(gy.iter())
        .map(|(&a, &b)| (a * a + b * b + MAG_EPS).sqrt())
        .collect();
    // Rescale the sigmoid so an exactly uniform image (magnitude sqrt(eps))
    // maps to exactly 0, matching the hard Canny output on flat regions.
    let zero_mag_sig = sigmoid(steepness * (MAG_EPS.sqrt() - threshold));
    let norm = 1.0 - zero_mag_sig;
    let raw_sig: Vec<f32> = mag
        .iter()
        .map(|&m| sigmoid(steepness * (m - threshold)))
        .collect();
    let out: Vec<f32> = raw_sig
        .iter()
        .map(|&s| ((s - zero_mag_sig) / norm).max(0.0))
        .collect();
    Ok(EdgeIntermediates {
        out: Tensor::new(vec![h, w, 1], out)?,
        gx,
        gy,
        mag,
        raw_sig,
    })
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

fn edge_features_backward(
    x: &Tensor,
    threshold: f32,
    steepness: f32,
    grad_out: &[f32],
) -> Result<Vec<f32>, TensorError> {
    let (h, w, _) = hwc("edge_features", x)?;
    let inter = edge_features_forward(x, threshold, steepness)?;
    let zero_mag_sig = sigmoid(steepness * (MAG_EPS.sqrt() - threshold));
    let norm = 1.0 - zero_mag_sig;
    // d out / d mag, zeroed where the rescale clamped at 0.
    let mut dmag = vec![0.0f32; h * w];
    for i in 0..h * w {
        let s = inter.raw_sig[i];
        if (s - zero_mag_sig) / norm > 0.0 {
            dmag[i] = grad_out[i] * steepness * s * (1.0 - s) / norm;
        }
    }
    let mut dgx = vec![0.0f32; h * w];
    let mut dgy = vec![0.0f32; h * w];
    for i in 0..h * w {
        dgx[i] = dmag[i] * inter.gx[i] / inter.mag[i];
        dgy[i] = dmag[i] * inter.gy[i] / inter.mag[i];
    }
    let mut dblur = correlate_replicate_adjoint(&dgx, h, w, &SOBEL_X, 3);
    let dblur_y = correlate_replicate_adjoint(&dgy, h, w, &SOBEL_Y, 3);
    for (a, b) in dblur.iter_mut().zip(dblur_y) {
        *a += b;
    }
    let gauss = gaussian5_kernel();
    Ok(correlate_replicate_adjoint(&dblur, h, w, &gauss, 5))
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Gradients of the op output w.r.t. each input, given the upstream gradient.
pub(super) fn backward(
    op: &PrimitiveOp,
    inputs: &[&Tensor],
    output: &Tensor,
    grad_out: &[f32],
) -> Result<Vec<Vec<f32>>, TensorError> {
    match op {
        PrimitiveOp::Dense => dense_backward(inputs[0], inputs[1], grad_out),
        PrimitiveOp::Conv2d { padding, stride } => {
            conv2d_backward(inputs[0], inputs[1], *padding, *stride, grad_out)
        }
        PrimitiveOp::Relu => Ok(vec![output
            .data()
            .iter()
            .zip(grad_out)
            .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
            .collect()]),
        PrimitiveOp::MaxPool { size, stride } => {
            max_pool_backward(inputs[0], *size, *stride, grad_out)
        }
        PrimitiveOp::Flatten => Ok(vec![grad_out.to_vec()]),
        PrimitiveOp::BilinearDownscale { out_h, out_w } => {
            bilinear_backward(inputs[0], *out_h, *out_w, grad_out)
        }
        PrimitiveOp::SoftmaxCrossEntropy { class } => {
            let probs = softmax(inputs[0].data());
            let g = grad_out[0];
            Ok(vec![probs
                .iter()
                .enumerate()
                .map(|(i, &p)| g * (p - if i == *class { 1.0 } else { 0.0 }))
                .collect()])
        }
        PrimitiveOp::Sum => Ok(vec![vec![grad_out[0]; inputs[0].numel()]]),
        PrimitiveOp::Scale { factor } => {
            Ok(vec![grad_out.iter().map(|&g| g * factor).collect()])
        }
        PrimitiveOp::Add => Ok(vec![grad_out.to_vec(), grad_out.to_vec()]),
        PrimitiveOp::Mul => Ok(vec![
            grad_out
                .iter()
                .zip(inputs[1].data())
                .map(|(&g, &b)| g * b)
                .collect(),
            grad_out
                .iter()
                .zip(inputs[0].data())
                .map(|(&g, &a)| g * a)
                .collect(),
        ]),
        PrimitiveOp::Tanh => Ok(vec![output
            .data()
            .iter()
            .zip(grad_out)
            .map(|(&y, &g)| g * (1.0 - y * y))
            .collect()]),
        PrimitiveOp::ConcatRows => {
            let na = inputs[0].numel();
            Ok(vec![grad_out[..na].to_vec(), grad_out[na..].to_vec()])
        }
        PrimitiveOp::EdgeFeatures {
            threshold,
            steepness,
        } => Ok(vec![edge_features_backward(
            inputs[0], *threshold, *steepness, grad_out,
        )?]),
    }
}

fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &[f32],
) -> Result<Vec<Vec<f32>>, TensorError> {
    let n_in = x.numel();
    let n_out = grad_out.len();
    let xd = x.data();
    let wd = w.data();
    let mut dx = vec![0.0f32; n_in];
    let mut dw = vec![0.0f32; n_in * n_out];
    for i in 0..n_in {
        let row = &wd[i * n_out..(i + 1) * n_out];
        let drow = &mut dw[i * n_out..(i + 1) * n_out];
        let xv = xd[i];
        let mut acc = 0.0;
        for o in 0..n_out {
            acc += grad_out[o] * row[o];
            drow[o] = xv * grad_out[o];
        }
        dx[i] = acc;
    }
    Ok(vec![dx, dw, grad_out.to_vec()])
}

fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    padding: Padding,
    stride: usize,
    grad_out: &[f32],
) -> Result<Vec<Vec<f32>>, TensorError> {
    let (h, wd_, cin) = hwc("conv2d", x)?;
    let (kh, kw, _, cout) = match w.shape() {
        [a, b, c, d] => (*a, *b, *c, *d),
        _ => unreachable!("validated in forward"),
    };
    let (oh, ow, pad_top, pad_left) = conv2d_geometry(h, wd_, kh, kw, padding, stride)?;
    let xd = x.data();
    let kd = w.data();
    let mut dx = vec![0.0f32; h * wd_ * cin];
    let mut dw = vec![0.0f32; kh * kw * cin * cout];
    let mut db = vec![0.0f32; cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &grad_out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            for (o, &gv) in g.iter().enumerate() {
                db[o] += gv;
            }
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad_top;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad_left;
                    if ix < 0 || ix >= wd_ as isize {
                        continue;
                    }
                    let base = ((iy as usize) * wd_ + ix as usize) * cin;
                    let kbase = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let kr = &kd[kbase + ci * cout..][..cout];
                        let dwr = &mut dw[kbase + ci * cout..kbase + (ci + 1) * cout];
                        let xv = xd[base + ci];
                        let mut acc = 0.0;
                        for (o, &gv) in g.iter().enumerate() {
                            acc += gv * kr[o];
                            dwr[o] += xv * gv;
                        }
                        dx[base + ci] += acc;
                    }
                }
            }
        }
    }
    Ok(vec![dx, dw, db])
}

fn max_pool_backward(
    x: &Tensor,
    size: usize,
    stride: usize,
    grad_out: &[f32],
) -> Result<Vec<Vec<f32>>, TensorError> {
    let (h, w, c) = hwc("max_pool", x)?;
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let xd = x.data();
    let mut dx = vec![0.0f32; h * w * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                // First maximum in window scan order wins ties.
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                dx[best_idx] += grad_out[(oy * ow + ox) * c + ch];
            }
        }
    }
    Ok(vec![dx])
}

fn bilinear_backward(
    x: &Tensor,
    out_h: usize,
    out_w: usize,
    grad_out: &[f32],
) -> Result<Vec<Vec<f32>>, TensorError> {
    let (h, w, c) = hwc("bilinear_downscale", x)?;
    let rows = bilinear_axis_plan(h, out_h);
    let cols = bilinear_axis_plan(w, out_w);
    let mut dx = vec![0.0f32; h * w * c];
    for (oy, &(y0, y1, wy0, wy1)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, wx0, wx1)) in cols.iter().enumerate() {
            let g = &grad_out[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
            for (ch, &gv) in g.iter().enumerate() {
                dx[(y0 * w + x0) * c + ch] += wy0 * wx0 * gv;
                dx[(y0 * w + x1) * c + ch] += wy0 * wx1 * gv;
                dx[(y1 * w + x0) * c + ch] += wy1 * wx0 * gv;
                dx[(y1 * w + x1) * c + ch] += wy1 * wx1 * gv;
            }
        }
    }
    Ok(vec![dx])
}
