//! Hand-differentiated network primitives.
//!
//! Tensors are flat `f64` slices. Feature maps are planar `C×H×W`; matrices
//! are row-major. Every `*_backward` returns gradients for all inputs, and
//! parameter gradients are accumulated (`+=`) so that a batch can be summed in
//! a fixed order.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A named trainable tensor with its gradient and Adam moments.
///
/// Equality ignores `grad`, which is scratch space between a backward pass
/// and the optimizer update and is not persisted.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl PartialEq for ParamTensor {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.shape == other.shape
            && self.values == other.values
            && self.m == other.m
            && self.v == other.v
    }
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            shape,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            values,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n]).expect("consistent by construction")
    }

    /// Zero-mean Gaussian initialization with the given std.
    pub fn gaussian(
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut RngStream,
    ) -> Self {
        let mut p = Self::zeros(name, shape);
        rng.fill_normal(&mut p.values, std);
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// 3×3 convolution, stride 1, zero padding 1

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * 9
    }

    fn check(&self, input: &[f64], kernel: &[f64], bias: &[f64]) -> Result<()> {
        let plane = self.height * self.width;
        if input.len() != self.c_in * plane {
            return Err(Error::Shape(format!(
                "conv input has {} values, expected {} channels of {}x{}",
                input.len(),
                self.c_in,
                self.height,
                self.width
            )));
        }
        if kernel.len() != self.kernel_len() || bias.len() != self.c_out {
            return Err(Error::Shape(format!(
                "conv kernel/bias sized for {}→{} channels expected",
                self.c_in, self.c_out
            )));
        }
        Ok(())
    }
}

/// Column range `[lo, hi)` of output pixels whose tap at offset `d - 1`
/// stays inside a row of width `w`.
#[inline]
fn tap_range(d: usize, w: usize) -> (usize, usize) {
    match d {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    }
}

/// Cross-correlation with a 3×3 kernel plus bias.
pub fn conv2d(shape: ConvShape, input: &[f64], kernel: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    shape.check(input, kernel, bias)?;
    let ConvShape {
        c_in,
        c_out,
        height: h,
        width: w,
    } = shape;
    let plane = h * w;
    let mut out = vec![0.0; c_out * plane];
    for o in 0..c_out {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..c_in {
            let src = &input[i * plane..(i + 1) * plane];
            let k = &kernel[(o * c_in + i) * 9..(o * c_in + i + 1) * 9];
            for dy in 0..3 {
                for dx in 0..3 {
                    let wgt = k[dy * 3 + dx];
                    let (x0, x1) = tap_range(dx, w);
                    for y in 0..h {
                        let sy = y + dy;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let srow = &src[(sy - 1) * w..sy * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        for x in x0..x1 {
                            drow[x] += wgt * srow[x + dx - 1];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns the input gradient; kernel and bias gradients are accumulated.
pub fn conv2d_backward(
    shape: ConvShape,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let ConvShape {
        c_in,
        c_out,
        height: h,
        width: w,
    } = shape;
    let plane = h * w;
    let mut grad_in = vec![0.0; c_in * plane];
    for o in 0..c_out {
        let g = &grad_out[o * plane..(o + 1) * plane];
        grad_bias[o] += g.iter().sum::<f64>();
        for i in 0..c_in {
            let src = &input[i * plane..(i + 1) * plane];
            let gin = &mut grad_in[i * plane..(i + 1) * plane];
            let base = (o * c_in + i) * 9;
            for dy in 0..3 {
                for dx in 0..3 {
                    let wgt = kernel[base + dy * 3 + dx];
                    let (x0, x1) = tap_range(dx, w);
                    let mut acc = 0.0;
                    for y in 0..h {
                        let sy = y + dy;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let grow = &g[y * w..(y + 1) * w];
                        let srow = &src[(sy - 1) * w..sy * w];
                        let girow = &mut gin[(sy - 1) * w..sy * w];
                        for x in x0..x1 {
                            acc += grow[x] * srow[x + dx - 1];
                            girow[x + dx - 1] += wgt * grow[x];
                        }
                    }
                    grad_kernel[base + dy * 3 + dx] += acc;
                }
            }
        }
    }
    grad_in
}

// ---------------------------------------------------------------------------
// SiLU

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| silu(v)).collect()
}

/// Gradient through SiLU given the pre-activation `x`.
pub fn silu_backward(x: &[f64], grad_out: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(grad_out)
        .map(|(&v, &g)| g * silu_grad(v))
        .collect()
}

// ---------------------------------------------------------------------------
// Dense layers: y = x·W + b with x n×in, W in×out

pub fn dense(
    x: &[f64],
    rows: usize,
    d_in: usize,
    d_out: usize,
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if x.len() != rows * d_in || weight.len() != d_in * d_out {
        return Err(Error::Shape(format!(
            "dense {d_in}→{d_out} on {rows} rows got x={} W={}",
            x.len(),
            weight.len()
        )));
    }
    if bias.is_some_and(|b| b.len() != d_out) {
        return Err(Error::Shape("dense bias length mismatch".into()));
    }
    let mut y = vec![0.0; rows * d_out];
    for r in 0..rows {
        let yr = &mut y[r * d_out..(r + 1) * d_out];
        if let Some(b) = bias {
            yr.copy_from_slice(b);
        }
        for (k, &xv) in x[r * d_in..(r + 1) * d_in].iter().enumerate() {
            let wk = &weight[k * d_out..(k + 1) * d_out];
            for (yv, &wv) in yr.iter_mut().zip(wk) {
                *yv += xv * wv;
            }
        }
    }
    Ok(y)
}

/// Returns the input gradient; weight (and bias) gradients are accumulated.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f64],
    rows: usize,
    d_in: usize,
    d_out: usize,
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: Option<&mut [f64]>,
) -> Vec<f64> {
    let mut gx = vec![0.0; rows * d_in];
    for r in 0..rows {
        let g = &grad_out[r * d_out..(r + 1) * d_out];
        let xr = &x[r * d_in..(r + 1) * d_in];
        let gxr = &mut gx[r * d_in..(r + 1) * d_in];
        for k in 0..d_in {
            let wk = &weight[k * d_out..(k + 1) * d_out];
            let gwk = &mut grad_weight[k * d_out..(k + 1) * d_out];
            let mut acc = 0.0;
            for j in 0..d_out {
                acc += g[j] * wk[j];
                gwk[j] += xr[k] * g[j];
            }
            gxr[k] = acc;
        }
    }
    if let Some(gb) = grad_bias {
        for r in 0..rows {
            for (b, &g) in gb.iter_mut().zip(&grad_out[r * d_out..(r + 1) * d_out]) {
                *b += g;
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// Sinusoidal step embedding

pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Invalid(format!(
            "time embedding dim must be even and positive, got {dim}"
        )));
    }
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        let arg = t as f64 * freq;
        out[2 * i] = arg.sin();
        out[2 * i + 1] = arg.cos();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Single-head softmax cross-attention

/// Row-wise softmax of an `rows × cols` matrix, max-shifted.
pub fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub output: Vec<f64>,
    /// Softmax weights, `P × S`.
    pub weights: Vec<f64>,
}

pub struct AttentionGrads {
    pub queries: Vec<f64>,
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
}

/// `softmax(Q·Kᵀ/√d)·V` for `Q: P×d`, `K, V: S×d`.
pub fn cross_attention(
    queries: &[f64],
    keys: &[f64],
    values: &[f64],
    d: usize,
) -> Result<Attention> {
    if d == 0
        || !queries.len().is_multiple_of(d)
        || !keys.len().is_multiple_of(d)
        || keys.len() != values.len()
    {
        return Err(Error::Shape(format!(
            "attention operands disagree with inner dim {d}: Q={} K={} V={}",
            queries.len(),
            keys.len(),
            values.len()
        )));
    }
    let p = queries.len() / d;
    let s = keys.len() / d;
    if s == 0 {
        return Err(Error::Shape("attention needs at least one key".into()));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut logits = vec![0.0; p * s];
    for i in 0..p {
        let q = &queries[i * d..(i + 1) * d];
        for j in 0..s {
            let k = &keys[j * d..(j + 1) * d];
            logits[i * s + j] = scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let weights = softmax_rows(&logits, s);
    let mut output = vec![0.0; p * d];
    for i in 0..p {
        let o = &mut output[i * d..(i + 1) * d];
        for j in 0..s {
            let a = weights[i * s + j];
            for (ov, &vv) in o.iter_mut().zip(&values[j * d..(j + 1) * d]) {
                *ov += a * vv;
            }
        }
    }
    Ok(Attention { output, weights })
}

pub fn cross_attention_backward(
    queries: &[f64],
    keys: &[f64],
    values: &[f64],
    d: usize,
    forward: &Attention,
    grad_out: &[f64],
) -> AttentionGrads {
    let p = queries.len() / d;
    let s = keys.len() / d;
    let scale = 1.0 / (d as f64).sqrt();
    let a = &forward.weights;
    let mut gv = vec![0.0; s * d];
    let mut glogits = vec![0.0; p * s];
    for i in 0..p {
        let go = &grad_out[i * d..(i + 1) * d];
        let mut dot = 0.0;
        for j in 0..s {
            let v = &values[j * d..(j + 1) * d];
            let ga: f64 = go.iter().zip(v).map(|(x, y)| x * y).sum();
            glogits[i * s + j] = ga;
            dot += ga * a[i * s + j];
            let aij = a[i * s + j];
            for (g, &x) in gv[j * d..(j + 1) * d].iter_mut().zip(go) {
                *g += aij * x;
            }
        }
        for j in 0..s {
            glogits[i * s + j] = a[i * s + j] * (glogits[i * s + j] - dot) * scale;
        }
    }
    let mut gq = vec![0.0; p * d];
    let mut gk = vec![0.0; s * d];
    for i in 0..p {
        for j in 0..s {
            let gl = glogits[i * s + j];
            let k = &keys[j * d..(j + 1) * d];
            let q = &queries[i * d..(i + 1) * d];
            for c in 0..d {
                gq[i * d + c] += gl * k[c];
                gk[j * d + c] += gl * q[c];
            }
        }
    }
    AttentionGrads {
        queries: gq,
        keys: gk,
        values: gv,
    }
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step using `param.grad`. `step` counts from 1.
pub fn adam_update(param: &mut ParamTensor, lr: f64, step: usize, cfg: &AdamConfig) {
    assert!(step >= 1, "adam step counts from 1");
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for k in 0..param.values.len() {
        let g = param.grad[k];
        param.m[k] = cfg.beta1 * param.m[k] + (1.0 - cfg.beta1) * g;
        param.v[k] = cfg.beta2 * param.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = param.m[k] / bc1;
        let v_hat = param.v[k] / bc2;
        param.values[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

/// Denominator floor for relative errors, so that coordinates whose true
/// gradient is zero compare on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares `analytic[i]` (one gradient vector per tensor) against central
/// differences of `loss` on up to `per_tensor` random coordinates of each
/// tensor (all coordinates when the tensor is smaller).
pub fn grad_check<F>(
    params: &mut [ParamTensor],
    analytic: &[Vec<f64>],
    mut loss: F,
    eps: f64,
    per_tensor: usize,
    rng: &mut RngStream,
) -> Result<GradCheckReport>
where
    F: FnMut(&[ParamTensor]) -> f64,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Invalid(format!("eps {eps} outside [1e-6, 1e-4]")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(
            "one analytic gradient per tensor required".into(),
        ));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for ti in 0..params.len() {
        let n = params[ti].len();
        if analytic[ti].len() != n {
            return Err(Error::Shape(format!(
                "analytic gradient for {} has wrong length",
                params[ti].name
            )));
        }
        // Partial Fisher-Yates: the first `take` entries become the sample.
        let take = n.min(per_tensor);
        let mut idx: Vec<usize> = (0..n).collect();
        for k in 0..take {
            let j = k + rng.below(n - k);
            idx.swap(k, j);
        }
        for &k in &idx[..take] {
            let orig = params[ti].values[k];
            params[ti].values[k] = orig + eps;
            let up = loss(params);
            params[ti].values[k] = orig - eps;
            let down = loss(params);
            params[ti].values[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti][k];
            if !(numeric.is_finite() && a.is_finite()) {
                return Err(Error::NonFinite {
                    step: 0,
                    what: format!("gradient of {}[{k}]", params[ti].name),
                });
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = params[ti].name.clone();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}
