//! The conditional denoiser and the ground-truth oracle.
//!
//! Network topology, all convolutions 3×3 / stride 1 / pad 1, features `F`:
//!
//! ```text
//! spectrum (re, im per channel) / spectrum_scale ─ conv → F/2 ─ silu ─┐
//! detail planes / hf_scale, spatial low band ──── conv → F/2 ─ silu ─┴─ concat (F)
//!   ─ 2 × residual block: h + conv(silu(conv(silu(h)) + time bias))
//!   ─ h + cross-attention(queries = pixels, keys/values = condition tokens)
//!   ─ head conv(silu(h)) → 5 per image channel: a clean-state estimate
//!   ─ mapped to the state at t − 1 (below), rescaled, and the spectrum
//!     channels projected onto Hermitian symmetry
//! ```
//!
//! The map to t − 1 mirrors one forward step. A Fourier bin outside the
//! removal region at `t` is copied from the input; a bin still removed at
//! `t − 1` becomes the replacement-noise mean, 0; the ring revealed by the
//! step takes the head's estimate. For detail coefficients the clean estimate
//! is `c_skip(t)·x_t + c_out(t)·head`, with the least-squares weights for the
//! band's data variance under the step-t marginal, and the output is the
//! Gaussian posterior mean of `x_{t−1}` given `x_t` and that estimate.
//!
//! The spatial low band is the inverse FFT of the bins still intact at `t`,
//! scaled to unit RMS. It costs no parameters and gives the wavelet stem the edge
//! positions its detail estimates have to line up with; a 3×3 convolution
//! over Fourier coefficients cannot localize them.
//!
//! The time bias of each block is `dense(silu(dense(time_embedding(t))))`.
//! Condition tokens come from a learned table with one row per class and a
//! final "null" row: a class condition attends over `[class row, null row]`,
//! the unconditional case over `[null row]` alone.

use crate::error::{Error, Result};
use crate::forward::removal_mask;
use crate::nn::{
    conv2d, conv2d_backward, cross_attention, cross_attention_backward, dense, dense_backward,
    silu_backward, silu_vec, time_embedding, Attention, ConvShape, ParamTensor,
};
use crate::rng::RngStream;
use crate::schedule::{make_schedule, DiffusionSchedule, ScheduleConfig};
use crate::spectral::{hermitian_symmetrize, ifft2, SpectralState, StateMeta};

/// Conditioning signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Unconditional,
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelHyper {
    /// Merged feature width F (even, ≥ 4). Each stem produces F/2.
    pub features: usize,
    pub levels: usize,
    /// Image channels C.
    pub channels: usize,
    pub num_classes: usize,
    pub time_dim: usize,
    /// Corruption process the model inverts; its step structure shapes the
    /// output (see [`DenoiserModel::forward`]).
    pub schedule: ScheduleConfig,
    /// Input normalization for spectrum components.
    pub spectrum_scale: f64,
    /// Input normalization for detail coefficients.
    pub hf_scale: f64,
    /// Data std of each detail band in units of `hf_scale`, pyramid band
    /// order (3 per level). Sets the skip weights of the clean estimate.
    pub band_std: Vec<f64>,
}

impl ModelHyper {
    pub fn validate(&self) -> Result<()> {
        if self.features < 4 || !self.features.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "features must be even and at least 4, got {}",
                self.features
            )));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Invalid("time_dim must be even and positive".into()));
        }
        if self.channels == 0 || self.levels == 0 || self.schedule.steps == 0 {
            return Err(Error::Invalid(
                "channels, levels and steps must be positive".into(),
            ));
        }
        if !(self.spectrum_scale > 0.0 && self.hf_scale > 0.0)
            || !self.spectrum_scale.is_finite()
            || !self.hf_scale.is_finite()
        {
            return Err(Error::Invalid(
                "input scales must be positive and finite".into(),
            ));
        }
        if self.band_std.len() != 3 * self.levels {
            return Err(Error::Invalid(format!(
                "band_std needs {} entries, got {}",
                3 * self.levels,
                self.band_std.len()
            )));
        }
        if !self.band_std.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::Invalid(
                "band_std must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps
    }

    /// The schedule for a given low-band size, in this model's noise units.
    pub fn diffusion_schedule(&self, lf_dims: (usize, usize)) -> Result<DiffusionSchedule> {
        let mut s = make_schedule(&self.schedule, lf_dims)?;
        s.spectrum_scale = self.spectrum_scale;
        s.hf_scale = self.hf_scale;
        Ok(s)
    }

    /// State channels per image channel: real, imaginary and 3 per level.
    pub fn io_channels_per_image_channel(&self) -> usize {
        2 + 3 * self.levels
    }

    pub fn io_channels(&self) -> usize {
        self.channels * self.io_channels_per_image_channel()
    }

    /// Wavelet stem inputs per image channel: the detail planes plus the
    /// spatial low band.
    pub fn wavelet_inputs_per_image_channel(&self) -> usize {
        3 * self.levels + 1
    }

    /// Closed-form number of scalar parameters, summed per layer group.
    pub fn parameter_count(&self) -> usize {
        let (c, f, d) = (self.channels, self.features, self.time_dim);
        let io = self.io_channels();
        let wavelet_in = c * self.wavelet_inputs_per_image_channel();
        let stems = (f / 2) * (2 * c) * 9 + (f / 2) * wavelet_in * 9 + f;
        let time = d * f + f;
        let blocks = 2 * (2 * (9 * f * f + f) + f * f + f);
        let attn = 4 * f * f;
        let table = (self.num_classes + 1) * f;
        let head = io * f * 9 + io;
        stems + time + blocks + attn + table + head
    }
}

// Fixed tensor slots, in creation order.
const FSTEM_W: usize = 0;
const FSTEM_B: usize = 1;
const WSTEM_W: usize = 2;
const WSTEM_B: usize = 3;
const TIME_W: usize = 4;
const TIME_B: usize = 5;
const BLOCK0: usize = 6;
const BLOCK_LEN: usize = 6;
// Offsets inside a residual block.
const B_CONV1_W: usize = 0;
const B_CONV1_B: usize = 1;
const B_TIME_W: usize = 2;
const B_TIME_B: usize = 3;
const B_CONV2_W: usize = 4;
const B_CONV2_B: usize = 5;
const BLOCKS: usize = 2;
const ATTN_Q: usize = BLOCK0 + BLOCKS * BLOCK_LEN;
const ATTN_K: usize = ATTN_Q + 1;
const ATTN_V: usize = ATTN_Q + 2;
const ATTN_O: usize = ATTN_Q + 3;
const CLASS_TABLE: usize = ATTN_Q + 4;
const HEAD_W: usize = CLASS_TABLE + 1;
const HEAD_B: usize = CLASS_TABLE + 2;
const N_TENSORS: usize = CLASS_TABLE + 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    pub hyper: ModelHyper,
    pub params: Vec<ParamTensor>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    meta: StateMeta,
    tokens_rows: Vec<usize>,
    xf: Vec<f64>,
    xw: Vec<f64>,
    pre_f: Vec<f64>,
    pre_w: Vec<f64>,
    temb: Vec<f64>,
    time_pre: Vec<f64>,
    time_act: Vec<f64>,
    blocks: Vec<BlockCache>,
    queries_in: Vec<f64>,
    tokens: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attention: Attention,
    /// Features entering the head, planar F×P.
    h_final: Vec<f64>,
    step: StepMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bin {
    /// Still removed at t − 1: the replacement-noise mean, 0.
    Noise,
    /// Removed at t but not at t − 1: the head's clean estimate.
    Revealed,
    /// Untouched by the step into t: copied from the input.
    Kept,
}

/// How the head output becomes the state at t − 1 for one step.
struct StepMap {
    bins: Vec<Bin>,
    /// Clean detail estimate `c_skip·x_t + c_out·head` (noise units), per band.
    c_skip: Vec<f64>,
    c_out: Vec<f64>,
    /// Posterior-mean weights on x_t and on the clean estimate.
    hf_input: f64,
    hf_clean: f64,
}

impl StepMap {
    fn new(
        schedule: &DiffusionSchedule,
        band_std: &[f64],
        lf_dims: (usize, usize),
        t: usize,
    ) -> Self {
        let now = removal_mask(schedule, lf_dims, t);
        let before = removal_mask(schedule, lf_dims, t - 1);
        let bins = now
            .iter()
            .zip(&before)
            .map(|(&n, &b)| match (n, b) {
                (_, true) => Bin::Noise,
                (true, false) => Bin::Revealed,
                (false, false) => Bin::Kept,
            })
            .collect();
        // Linear least-squares estimate of a coefficient with std σ from
        // x_t = m·x_0 + n·ε, and the std of its error.
        let (m, n) = schedule.hf_marginal(t);
        let n = n / schedule.hf_scale;
        let (mut c_skip, mut c_out) = (Vec::new(), Vec::new());
        for &sd in band_std {
            let var = sd * sd;
            let total = m * m * var + n * n;
            c_skip.push(m * var / total);
            c_out.push(sd * n / total.sqrt());
        }
        let (hf_input, hf_clean) = schedule.hf_posterior_mean(t);
        Self {
            bins,
            c_skip,
            c_out,
            hf_input,
            hf_clean,
        }
    }
}

struct BlockCache {
    input: Vec<f64>,
    u: Vec<f64>,
    pre2: Vec<f64>,
    v: Vec<f64>,
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Adjoint of the spectrum symmetrization on the flat state gradient; the
/// projection is self-adjoint, so this applies it to the spectrum parts.
fn symmetrize_flat_spectrum(state: &mut SpectralState) {
    for s in state.spectrum.iter_mut() {
        *s = hermitian_symmetrize(s);
    }
}

/// He-style std for a layer with `fan_in` inputs.
fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub fn init_model(hyper: ModelHyper, rng: &mut RngStream) -> Result<DenoiserModel> {
    hyper.validate()?;
    let f = hyper.features;
    let half = f / 2;
    let c = hyper.channels;
    let wavelet_in = c * hyper.wavelet_inputs_per_image_channel();
    let io = hyper.io_channels();
    let d = hyper.time_dim;
    let mut params = Vec::with_capacity(N_TENSORS);
    params.push(ParamTensor::gaussian(
        "fourier_stem.weight",
        vec![half, 2 * c, 3, 3],
        he_std(2 * c * 9),
        rng,
    ));
    params.push(ParamTensor::zeros("fourier_stem.bias", vec![half]));
    params.push(ParamTensor::gaussian(
        "wavelet_stem.weight",
        vec![half, wavelet_in, 3, 3],
        he_std(wavelet_in * 9),
        rng,
    ));
    params.push(ParamTensor::zeros("wavelet_stem.bias", vec![half]));
    params.push(ParamTensor::gaussian(
        "time_mlp.weight",
        vec![d, f],
        he_std(d),
        rng,
    ));
    params.push(ParamTensor::zeros("time_mlp.bias", vec![f]));
    for b in 0..BLOCKS {
        let p = format!("block{b}");
        params.push(ParamTensor::gaussian(
            format!("{p}.conv1.weight"),
            vec![f, f, 3, 3],
            he_std(f * 9),
            rng,
        ));
        params.push(ParamTensor::zeros(format!("{p}.conv1.bias"), vec![f]));
        params.push(ParamTensor::gaussian(
            format!("{p}.time.weight"),
            vec![f, f],
            he_std(f),
            rng,
        ));
        params.push(ParamTensor::zeros(format!("{p}.time.bias"), vec![f]));
        params.push(ParamTensor::gaussian(
            format!("{p}.conv2.weight"),
            vec![f, f, 3, 3],
            he_std(f * 9),
            rng,
        ));
        params.push(ParamTensor::zeros(format!("{p}.conv2.bias"), vec![f]));
    }
    for name in ["attn.query", "attn.key", "attn.value", "attn.out"] {
        params.push(ParamTensor::gaussian(name, vec![f, f], he_std(f), rng));
    }
    params.push(ParamTensor::gaussian(
        "class_table",
        vec![hyper.num_classes + 1, f],
        0.02,
        rng,
    ));
    params.push(ParamTensor::gaussian(
        "head.weight",
        vec![io, f, 3, 3],
        he_std(f * 9),
        rng,
    ));
    params.push(ParamTensor::zeros("head.bias", vec![io]));
    debug_assert_eq!(params.len(), N_TENSORS);
    let mut model = DenoiserModel { hyper, params };
    model.snap_to_f32();
    Ok(model)
}

impl DenoiserModel {
    /// Rebuilds a model from named tensors (checkpoint load). Names, order and
    /// shapes must match what [`init_model`] produces for `hyper`.
    pub fn from_tensors(hyper: ModelHyper, tensors: Vec<ParamTensor>) -> Result<Self> {
        let template = init_model(hyper.clone(), &mut RngStream::new(0))?;
        if template.params.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                template.params.len(),
                tensors.len()
            )));
        }
        for (want, got) in template.params.iter().zip(&tensors) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        Ok(Self {
            hyper,
            params: tensors,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(ParamTensor::is_finite)
    }

    /// Rounds values and optimizer moments to the nearest `f32`, so that the
    /// 32-bit checkpoint format stores them exactly.
    pub fn snap_to_f32(&mut self) {
        for p in &mut self.params {
            for buf in [&mut p.values, &mut p.m, &mut p.v] {
                buf.iter_mut().for_each(|x| *x = *x as f32 as f64);
            }
        }
    }

    fn block(&self, b: usize, slot: usize) -> &ParamTensor {
        &self.params[BLOCK0 + b * BLOCK_LEN + slot]
    }

    fn token_rows(&self, condition: Condition) -> Result<Vec<usize>> {
        let null = self.hyper.num_classes;
        match condition {
            Condition::Unconditional => Ok(vec![null]),
            Condition::Class(c) if c < self.hyper.num_classes => Ok(vec![c, null]),
            Condition::Class(c) => Err(Error::Invalid(format!(
                "class {c} out of range for {} classes",
                self.hyper.num_classes
            ))),
        }
    }

    fn check_input(&self, state: &SpectralState, t: usize) -> Result<()> {
        if self.hyper.levels != 1 || state.meta.levels != 1 {
            return Err(Error::Invalid(
                "the denoiser consumes single-level pyramids only".into(),
            ));
        }
        if t == 0 || t > self.hyper.steps() {
            return Err(Error::StepRange {
                t,
                lo: 1,
                hi: self.hyper.steps(),
            });
        }
        if state.t != t {
            return Err(Error::Invalid(format!(
                "state is at t = {}, asked to denoise t = {t}",
                state.t
            )));
        }
        if state.meta.channels != self.hyper.channels {
            return Err(Error::Shape(format!(
                "model expects {} image channels, state has {}",
                self.hyper.channels, state.meta.channels
            )));
        }
        state.validate()
    }

    /// Predicts the state at `t − 1` from the state at `t`.
    pub fn forward(
        &self,
        state: &SpectralState,
        t: usize,
        condition: Condition,
    ) -> Result<SpectralState> {
        Ok(self.forward_cached(state, t, condition)?.0)
    }

    pub fn forward_cached(
        &self,
        state: &SpectralState,
        t: usize,
        condition: Condition,
    ) -> Result<(SpectralState, ForwardCache)> {
        self.check_input(state, t)?;
        let hp = &self.hyper;
        let f = hp.features;
        let half = f / 2;
        let c = hp.channels;
        let (h, w) = state.meta.lf_dims();
        let plane = h * w;
        let io_per = hp.io_channels_per_image_channel();

        let step = StepMap::new(&hp.diffusion_schedule((h, w))?, &hp.band_std, (h, w), t);

        // Normalized stem inputs.
        let mut xf = Vec::with_capacity(2 * c * plane);
        let wpc = hp.wavelet_inputs_per_image_channel();
        let mut xw = Vec::with_capacity(wpc * c * plane);
        // By Parseval a spectrum of RMS s has a spatial RMS of s / √N.
        let spatial = (plane as f64).sqrt() / hp.spectrum_scale;
        for ch in 0..c {
            let s = &state.spectrum[ch];
            xf.extend(s.re.iter().map(|v| v / hp.spectrum_scale));
            xf.extend(s.im.iter().map(|v| v / hp.spectrum_scale));
            for band in &state.hf[ch] {
                xw.extend(band.data.iter().map(|v| v / hp.hf_scale));
            }
            // Only bins the forward chain has not touched by t are signal.
            let mut known = s.clone();
            for (i, bin) in step.bins.iter().enumerate() {
                if *bin != Bin::Kept {
                    known.re[i] = 0.0;
                    known.im[i] = 0.0;
                }
            }
            let low = ifft2(&known)?.plane;
            xw.extend(low.data.iter().map(|v| v * spatial));
        }

        let fshape = ConvShape {
            c_in: 2 * c,
            c_out: half,
            height: h,
            width: w,
        };
        let wshape = ConvShape {
            c_in: wpc * c,
            c_out: half,
            height: h,
            width: w,
        };
        let pre_f = conv2d(
            fshape,
            &xf,
            &self.params[FSTEM_W].values,
            &self.params[FSTEM_B].values,
        )?;
        let pre_w = conv2d(
            wshape,
            &xw,
            &self.params[WSTEM_W].values,
            &self.params[WSTEM_B].values,
        )?;
        let mut hidden = silu_vec(&pre_f);
        hidden.extend(silu_vec(&pre_w));

        let temb = time_embedding(t, hp.time_dim)?;
        let time_pre = dense(
            &temb,
            1,
            hp.time_dim,
            f,
            &self.params[TIME_W].values,
            Some(&self.params[TIME_B].values),
        )?;
        let time_act = silu_vec(&time_pre);

        let fshape_ff = ConvShape {
            c_in: f,
            c_out: f,
            height: h,
            width: w,
        };
        let mut blocks = Vec::with_capacity(BLOCKS);
        for b in 0..BLOCKS {
            let input = hidden.clone();
            let u = silu_vec(&input);
            let mut pre2 = conv2d(
                fshape_ff,
                &u,
                &self.block(b, B_CONV1_W).values,
                &self.block(b, B_CONV1_B).values,
            )?;
            let tbias = dense(
                &time_act,
                1,
                f,
                f,
                &self.block(b, B_TIME_W).values,
                Some(&self.block(b, B_TIME_B).values),
            )?;
            for (ch, bias) in tbias.iter().enumerate() {
                pre2[ch * plane..(ch + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v += bias);
            }
            let v = silu_vec(&pre2);
            let out = conv2d(
                fshape_ff,
                &v,
                &self.block(b, B_CONV2_W).values,
                &self.block(b, B_CONV2_B).values,
            )?;
            add_into(&mut hidden, &out);
            blocks.push(BlockCache { input, u, pre2, v });
        }

        // Cross-attention: pixels query the condition tokens.
        let queries_in = transpose(&hidden, f, plane);
        let tokens_rows = self.token_rows(condition)?;
        let table = &self.params[CLASS_TABLE].values;
        let tokens: Vec<f64> = tokens_rows
            .iter()
            .flat_map(|&r| table[r * f..(r + 1) * f].iter().copied())
            .collect();
        let n_tok = tokens_rows.len();
        let q = dense(&queries_in, plane, f, f, &self.params[ATTN_Q].values, None)?;
        let k = dense(&tokens, n_tok, f, f, &self.params[ATTN_K].values, None)?;
        let v = dense(&tokens, n_tok, f, f, &self.params[ATTN_V].values, None)?;
        let attention = cross_attention(&q, &k, &v, f)?;
        let z = dense(
            &attention.output,
            plane,
            f,
            f,
            &self.params[ATTN_O].values,
            None,
        )?;
        add_into(&mut hidden, &transpose(&z, plane, f));

        let h_final = hidden;
        let head_shape = ConvShape {
            c_in: f,
            c_out: hp.io_channels(),
            height: h,
            width: w,
        };
        let y = conv2d(
            head_shape,
            &silu_vec(&h_final),
            &self.params[HEAD_W].values,
            &self.params[HEAD_B].values,
        )?;

        // The head estimates the clean state; one forward step's structure
        // turns that estimate into the state at t − 1.
        let mut pred = SpectralState::zeros(state.meta, t - 1);
        for ch in 0..c {
            let base = ch * io_per * plane;
            let at = |k: usize, i: usize| y[base + k * plane + i];
            let s = &mut pred.spectrum[ch];
            for i in 0..plane {
                let (re, im) = match step.bins[i] {
                    Bin::Noise => (0.0, 0.0),
                    Bin::Revealed => (at(0, i), at(1, i)),
                    Bin::Kept => (xf[(2 * ch) * plane + i], xf[(2 * ch + 1) * plane + i]),
                };
                s.re[i] = re * hp.spectrum_scale;
                s.im[i] = im * hp.spectrum_scale;
            }
            for (kb, band) in pred.hf[ch].iter_mut().enumerate() {
                for i in 0..plane {
                    let x = xw[(wpc * ch + kb) * plane + i];
                    let x0 = step.c_skip[kb] * x + step.c_out[kb] * at(2 + kb, i);
                    band.data[i] = (step.hf_input * x + step.hf_clean * x0) * hp.hf_scale;
                }
            }
        }
        symmetrize_flat_spectrum(&mut pred);

        let cache = ForwardCache {
            meta: state.meta,
            tokens_rows,
            xf,
            xw,
            pre_f,
            pre_w,
            temb,
            time_pre,
            time_act,
            blocks,
            queries_in,
            tokens,
            q,
            k,
            v,
            attention,
            h_final,
            step,
        };
        Ok((pred, cache))
    }

    /// Accumulates parameter gradients given `grad` = ∂loss/∂prediction,
    /// laid out like the predicted state.
    pub fn backward(&mut self, cache: &ForwardCache, grad: &SpectralState) -> Result<()> {
        if grad.meta != cache.meta {
            return Err(Error::Shape(
                "gradient geometry differs from forward".into(),
            ));
        }
        let hp = self.hyper.clone();
        let f = hp.features;
        let half = f / 2;
        let c = hp.channels;
        let (h, w) = cache.meta.lf_dims();
        let plane = h * w;
        let io_per = hp.io_channels_per_image_channel();

        let mut g = grad.clone();
        symmetrize_flat_spectrum(&mut g);
        let mut gy = vec![0.0; hp.io_channels() * plane];
        for ch in 0..c {
            let base = ch * io_per * plane;
            let s = &g.spectrum[ch];
            for i in 0..plane {
                if cache.step.bins[i] == Bin::Revealed {
                    gy[base + i] = s.re[i] * hp.spectrum_scale;
                    gy[base + plane + i] = s.im[i] * hp.spectrum_scale;
                }
            }
            for (kb, band) in g.hf[ch].iter().enumerate() {
                let hf = cache.step.hf_clean * cache.step.c_out[kb] * hp.hf_scale;
                for i in 0..plane {
                    gy[base + (2 + kb) * plane + i] = band.data[i] * hf;
                }
            }
        }

        // Head.
        let head_shape = ConvShape {
            c_in: f,
            c_out: hp.io_channels(),
            height: h,
            width: w,
        };
        let head_in = silu_vec(&cache.h_final);
        let (kv, gw, gb) = weight_slots(&mut self.params, HEAD_W, HEAD_B);
        let g_head_in = conv2d_backward(head_shape, &head_in, kv, &gy, gw, gb);
        let mut g_hidden = silu_backward(&cache.h_final, &g_head_in);

        // Attention residual.
        let g_z = transpose(&g_hidden, f, plane);
        let n_tok = cache.tokens_rows.len();
        let g_att_out = dense_backward(
            &cache.attention.output,
            plane,
            f,
            f,
            &self.params[ATTN_O].values.clone(),
            &g_z,
            &mut self.params[ATTN_O].grad,
            None,
        );
        let ga = cross_attention_backward(
            &cache.q,
            &cache.k,
            &cache.v,
            f,
            &cache.attention,
            &g_att_out,
        );
        let g_queries_in = dense_backward(
            &cache.queries_in,
            plane,
            f,
            f,
            &self.params[ATTN_Q].values.clone(),
            &ga.queries,
            &mut self.params[ATTN_Q].grad,
            None,
        );
        let mut g_tokens = dense_backward(
            &cache.tokens,
            n_tok,
            f,
            f,
            &self.params[ATTN_K].values.clone(),
            &ga.keys,
            &mut self.params[ATTN_K].grad,
            None,
        );
        let g_tok_v = dense_backward(
            &cache.tokens,
            n_tok,
            f,
            f,
            &self.params[ATTN_V].values.clone(),
            &ga.values,
            &mut self.params[ATTN_V].grad,
            None,
        );
        add_into(&mut g_tokens, &g_tok_v);
        {
            let table_grad = &mut self.params[CLASS_TABLE].grad;
            for (j, &row) in cache.tokens_rows.iter().enumerate() {
                add_into(
                    &mut table_grad[row * f..(row + 1) * f],
                    &g_tokens[j * f..(j + 1) * f],
                );
            }
        }
        add_into(&mut g_hidden, &transpose(&g_queries_in, plane, f));

        // Residual blocks, last first.
        let ff = ConvShape {
            c_in: f,
            c_out: f,
            height: h,
            width: w,
        };
        let mut g_time_act = vec![0.0; f];
        for b in (0..BLOCKS).rev() {
            let bc = &cache.blocks[b];
            let base = BLOCK0 + b * BLOCK_LEN;
            let (kv, gw2, gb2) = weight_slots(&mut self.params, base + B_CONV2_W, base + B_CONV2_B);
            let g_v = conv2d_backward(ff, &bc.v, kv, &g_hidden, gw2, gb2);
            let g_pre2 = silu_backward(&bc.pre2, &g_v);
            let g_tbias: Vec<f64> = (0..f)
                .map(|ch| g_pre2[ch * plane..(ch + 1) * plane].iter().sum())
                .collect();
            let (kv, gtw, gtb) = weight_slots(&mut self.params, base + B_TIME_W, base + B_TIME_B);
            let g_ta = dense_backward(&cache.time_act, 1, f, f, kv, &g_tbias, gtw, Some(gtb));
            add_into(&mut g_time_act, &g_ta);
            let (kv, gw1, gb1) = weight_slots(&mut self.params, base + B_CONV1_W, base + B_CONV1_B);
            let g_u = conv2d_backward(ff, &bc.u, kv, &g_pre2, gw1, gb1);
            let g_in = silu_backward(&bc.input, &g_u);
            add_into(&mut g_hidden, &g_in);
        }

        // Time MLP.
        let g_time_pre = silu_backward(&cache.time_pre, &g_time_act);
        let (kv, gtw, gtb) = weight_slots(&mut self.params, TIME_W, TIME_B);
        dense_backward(
            &cache.temb,
            1,
            hp.time_dim,
            f,
            kv,
            &g_time_pre,
            gtw,
            Some(gtb),
        );

        // Stems.
        let (g_af, g_aw) = g_hidden.split_at(half * plane);
        let g_pre_f = silu_backward(&cache.pre_f, g_af);
        let g_pre_w = silu_backward(&cache.pre_w, g_aw);
        let fshape = ConvShape {
            c_in: 2 * c,
            c_out: half,
            height: h,
            width: w,
        };
        let wpc = self.hyper.wavelet_inputs_per_image_channel();
        let wshape = ConvShape {
            c_in: wpc * c,
            c_out: half,
            height: h,
            width: w,
        };
        let (kv, gw, gb) = weight_slots(&mut self.params, FSTEM_W, FSTEM_B);
        conv2d_backward(fshape, &cache.xf, kv, &g_pre_f, gw, gb);
        let (kv, gw, gb) = weight_slots(&mut self.params, WSTEM_W, WSTEM_B);
        conv2d_backward(wshape, &cache.xw, kv, &g_pre_w, gw, gb);
        Ok(())
    }
}

/// Weight values with the weight and bias gradient buffers of a layer.
fn weight_slots(
    params: &mut [ParamTensor],
    weight: usize,
    bias: usize,
) -> (&[f64], &mut [f64], &mut [f64]) {
    debug_assert!(weight < bias);
    let (lo, hi) = params.split_at_mut(bias);
    let w = &mut lo[weight];
    (&w.values, &mut w.grad, &mut hi[0].grad)
}

/// Anything that can take the state at `t` to a prediction at `t − 1`.
pub trait Denoiser {
    fn denoise(
        &self,
        state: &SpectralState,
        t: usize,
        condition: Condition,
    ) -> Result<SpectralState>;
}

impl Denoiser for DenoiserModel {
    fn denoise(
        &self,
        state: &SpectralState,
        t: usize,
        condition: Condition,
    ) -> Result<SpectralState> {
        self.forward(state, t, condition)
    }
}

/// Returns the true previous state of a recorded forward trajectory,
/// ignoring its input and the condition.
pub struct OracleDenoiser {
    trajectory: Vec<SpectralState>,
}

impl OracleDenoiser {
    pub fn new(trajectory: Vec<SpectralState>) -> Self {
        Self { trajectory }
    }

    pub fn steps(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }
}

impl Denoiser for OracleDenoiser {
    fn denoise(&self, _: &SpectralState, t: usize, _: Condition) -> Result<SpectralState> {
        if t == 0 || t >= self.trajectory.len() {
            return Err(Error::StepRange {
                t,
                lo: 1,
                hi: self.steps(),
            });
        }
        Ok(self.trajectory[t - 1].clone())
    }
}

/// Convenience wrapper matching the oracle's functional form.
pub fn oracle_denoiser(trajectory: &[SpectralState], t: usize) -> Result<SpectralState> {
    if t == 0 || t >= trajectory.len() {
        return Err(Error::StepRange {
            t,
            lo: 1,
            hi: trajectory.len().saturating_sub(1),
        });
    }
    Ok(trajectory[t - 1].clone())
}

/// Model gradient of `loss(pred)` for a fixed target, exposed for checkers.
pub fn loss_and_grad<L>(
    model: &mut DenoiserModel,
    state: &SpectralState,
    t: usize,
    condition: Condition,
    loss: L,
) -> Result<f64>
where
    L: Fn(&SpectralState) -> Result<(f64, SpectralState)>,
{
    let (pred, cache) = model.forward_cached(state, t, condition)?;
    let (value, grad) = loss(&pred)?;
    model.backward(&cache, &grad)?;
    Ok(value)
}
