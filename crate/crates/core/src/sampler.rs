//! Reverse chain from a fully corrupted state back to pixels.
//!
//! Each step asks a [`Denoiser`] for the state at `t − 1`. Deterministic mode
//! uses that prediction as is. Stochastic mode keeps only what the forward
//! chain leaves unknown: bins outside the removal region at `t` are copied
//! from the input (the forward step never touched them), bins still removed
//! at `t − 1` are redrawn from the replacement distribution, and detail
//! planes receive the posterior noise of the Gaussian step. The redraws
//! vanish at `t = 1`. Optionally a measured [`ReverseVariance`] adds the
//! denoiser's own error back as noise: white on the revealed bins, and on
//! detail planes shaped by the error's measured power spectrum, since detail
//! errors are spatially correlated and white noise of the same variance
//! would put its energy at the wrong frequencies.

use crate::error::{Error, Result};
use crate::forward::{apply, corrupt_step, corrupt_to, removal_mask};
use crate::model::{Condition, Denoiser};
use crate::rng::RngStream;
use crate::schedule::DiffusionSchedule;
use crate::spectral::{fft2, ifft2, reconstruct, ImageTensor, Plane, SpectralState, StateMeta};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleOptions {
    pub stochastic: bool,
    /// Extra per-step noise for the denoiser's own error (stochastic mode).
    pub reverse_variance: Option<ReverseVariance>,
}

impl SampleOptions {
    pub fn stochastic() -> Self {
        Self {
            stochastic: true,
            reverse_variance: None,
        }
    }

    pub fn deterministic() -> Self {
        Self::default()
    }
}

/// Mean squared one-step error of a denoiser per step `t` (index `t − 1`),
/// in state units, measured on clean data pushed through the forward chain.
///
/// A denoiser that returns conditional means loses exactly this much
/// variance per step; adding it back as noise keeps sample statistics
/// matched to the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseVariance {
    /// Per component of a Fourier bin revealed by step t.
    pub spectrum: Vec<f64>,
    /// Per step, then per detail band in pyramid order (pooled over image
    /// channels): power spectrum of the error against the posterior mean given
    /// the true clean state, as `|fft2(e)|² / N` per bin, so its mean over the
    /// bins is the error variance.
    pub hf: Vec<Vec<Vec<f64>>>,
}

/// Measures [`ReverseVariance`] with one forward draw per example and step.
pub fn calibrate_reverse_variance<D: Denoiser + ?Sized>(
    denoiser: &D,
    examples: &[(SpectralState, Condition)],
    schedule: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<ReverseVariance> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Invalid("variance calibration needs examples".into()))?;
    let dims = first.0.meta.lf_dims();
    let steps = schedule.steps;
    let meta = first.0.meta;
    let bands = meta.bands();
    let band_len = |kb: usize| meta.hf_dims(kb).0 * meta.hf_dims(kb).1;
    let mut out = ReverseVariance {
        spectrum: vec![0.0; steps],
        hf: vec![(0..bands).map(|kb| vec![0.0; band_len(kb)]).collect(); steps],
    };
    for t in 1..=steps {
        let revealed = revealed_bins(schedule, dims, t);
        let (a, b) = schedule.hf_posterior_mean(t);
        let (mut se, mut sn) = (0.0, 0usize);
        let mut planes = 0usize;
        for (x0, cond) in examples {
            let prev = corrupt_to(x0, t - 1, schedule, rng)?;
            let xt = corrupt_step(&prev, schedule, rng)?;
            let pred = denoiser.denoise(&xt, t, *cond)?;
            for (p, c) in pred.spectrum.iter().zip(&x0.spectrum) {
                for &k in &revealed {
                    se += (p.re[k] - c.re[k]).powi(2) + (p.im[k] - c.im[k]).powi(2);
                    sn += 2;
                }
            }
            for ch in 0..pred.hf.len() {
                for (kb, p) in pred.hf[ch].iter().enumerate() {
                    let (x, c) = (&xt.hf[ch][kb], &x0.hf[ch][kb]);
                    let mut err = p.clone();
                    for i in 0..p.data.len() {
                        err.data[i] -= a * x.data[i] + b * c.data[i];
                    }
                    let spec = fft2(&err)?;
                    let n = p.data.len() as f64;
                    for (acc, k) in out.hf[t - 1][kb].iter_mut().zip(0..) {
                        *acc += (spec.re[k] * spec.re[k] + spec.im[k] * spec.im[k]) / n;
                    }
                }
                planes += 1;
            }
        }
        out.spectrum[t - 1] = if sn == 0 { 0.0 } else { se / sn as f64 };
        for band in out.hf[t - 1].iter_mut() {
            band.iter_mut().for_each(|v| *v /= planes.max(1) as f64);
        }
    }
    Ok(out)
}

/// Bins removed at `t` but not at `t − 1`, row-major.
fn revealed_bins(schedule: &DiffusionSchedule, dims: (usize, usize), t: usize) -> Vec<usize> {
    let now = removal_mask(schedule, dims, t);
    let before = removal_mask(schedule, dims, t - 1);
    (0..now.len()).filter(|&k| now[k] && !before[k]).collect()
}

/// Adds conjugate-symmetric noise of per-component variance `var` to the
/// given bins (imaginary parts of self-conjugate bins stay untouched).
fn add_symmetric_noise(state: &mut SpectralState, bins: &[usize], var: f64, rng: &mut RngStream) {
    if var <= 0.0 || bins.is_empty() {
        return;
    }
    let std = var.sqrt();
    let (h, w) = state.meta.lf_dims();
    for spec in &mut state.spectrum {
        for &k in bins {
            let (u, v) = (k / w, k % w);
            let mirror = ((h - u) % h) * w + (w - v) % w;
            if mirror == k {
                spec.re[k] += std * rng.normal();
            } else if k < mirror {
                let (re, im) = (std * rng.normal(), std * rng.normal());
                spec.re[k] += re;
                spec.im[k] += im;
                spec.re[mirror] += re;
                spec.im[mirror] -= im;
            }
        }
    }
}

/// Stationary Gaussian noise on a plane with the given power spectrum
/// (`|fft2|² / N` per bin, symmetric under negation of the frequency).
fn colored_noise(height: usize, width: usize, power: &[f64], rng: &mut RngStream) -> Result<Plane> {
    let mut white = Plane::zeros(height, width);
    rng.fill_normal(&mut white.data, 1.0);
    let mut spec = fft2(&white)?;
    for (k, p) in power.iter().enumerate() {
        let g = p.max(0.0).sqrt();
        spec.re[k] *= g;
        spec.im[k] *= g;
    }
    Ok(ifft2(&spec)?.plane)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Reconstruction of the final state, unbounded.
    pub image: ImageTensor,
    /// The same image clamped to [0, 1] for writing.
    pub clamped: ImageTensor,
}

/// State at `T`: every Fourier bin is replacement noise and every detail
/// coefficient is drawn from the terminal marginal.
pub fn init_terminal_state(
    meta: StateMeta,
    schedule: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<SpectralState> {
    check_meta(meta, schedule)?;
    let t = schedule.steps;
    let mut state = SpectralState::zeros(meta, t);
    let mask = vec![true; meta.lf_dims().0 * meta.lf_dims().1];
    let std = schedule.fourier_noise_std(t);
    apply(&mut state, &mask, std, 0.0, schedule.hf_marginal(t).1, rng);
    Ok(state)
}

fn check_meta(meta: StateMeta, schedule: &DiffusionSchedule) -> Result<()> {
    let (h, w) = meta.lf_dims();
    if crate::spectral::max_radius(h, w) != schedule.r_max {
        return Err(Error::Shape(format!(
            "schedule built for corner radius {}, meta has a {h}x{w} low band",
            schedule.r_max
        )));
    }
    Ok(())
}

fn check_finite(state: &SpectralState, t: usize) -> Result<()> {
    if state.to_flat().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step: t,
            what: "denoiser prediction".into(),
        })
    }
}

/// Bins outside the removal region at `t` are never modified by the forward
/// step into `t`, so their values at `t − 1` are known exactly.
fn keep_untouched_bins(
    pred: &mut SpectralState,
    input: &SpectralState,
    schedule: &DiffusionSchedule,
    t: usize,
) {
    let mask = removal_mask(schedule, input.meta.lf_dims(), t);
    for (p, x) in pred.spectrum.iter_mut().zip(&input.spectrum) {
        for (k, _) in mask.iter().enumerate().filter(|(_, &m)| !m) {
            p.re[k] = x.re[k];
            p.im[k] = x.im[k];
        }
    }
}

/// One reverse step from `state` at `t` to `t − 1`.
pub fn reverse_step<D: Denoiser + ?Sized>(
    denoiser: &D,
    state: &SpectralState,
    t: usize,
    condition: Condition,
    schedule: &DiffusionSchedule,
    options: &SampleOptions,
    rng: &mut RngStream,
) -> Result<SpectralState> {
    let mut next = denoiser.denoise(state, t, condition)?;
    check_finite(&next, t)?;
    if next.t != t - 1 {
        return Err(Error::Invalid(format!(
            "denoiser returned t = {} for input t = {t}",
            next.t
        )));
    }
    if let Some(rv) = &options.reverse_variance {
        let bands = state.meta.bands();
        if rv.spectrum.len() != schedule.steps
            || rv.hf.len() != schedule.steps
            || rv.hf.iter().any(|b| {
                b.len() != bands
                    || b.iter().enumerate().any(|(kb, p)| {
                        let (h, w) = state.meta.hf_dims(kb);
                        p.len() != h * w
                    })
            })
        {
            return Err(Error::Shape(
                "reverse variance length differs from T".into(),
            ));
        }
    }
    if options.stochastic {
        keep_untouched_bins(&mut next, state, schedule, t);
        let dims = state.meta.lf_dims();
        let mask = removal_mask(schedule, dims, t - 1);
        let std = if t > 1 {
            schedule.fourier_noise_std(t - 1)
        } else {
            0.0
        };
        let post = schedule.hf_posterior_std(t).powi(2);
        match &options.reverse_variance {
            None => apply(&mut next, &mask, std, 1.0, post.sqrt(), rng),
            Some(rv) => {
                apply(&mut next, &mask, std, 1.0, 0.0, rng);
                let post_std = post.sqrt();
                for bands in next.hf.iter_mut() {
                    for (band, power) in bands.iter_mut().zip(&rv.hf[t - 1]) {
                        let (h, w) = band.dims();
                        let shaped = colored_noise(h, w, power, rng)?;
                        for (v, e) in band.data.iter_mut().zip(&shaped.data) {
                            *v += post_std * rng.normal() + e;
                        }
                    }
                }
                let revealed = revealed_bins(schedule, dims, t);
                add_symmetric_noise(&mut next, &revealed, rv.spectrum[t - 1], rng);
            }
        }
    }
    Ok(next)
}

/// Runs the reverse chain from `start` (at its own `t`) down to 0.
pub fn reverse_chain<D: Denoiser + ?Sized>(
    denoiser: &D,
    start: SpectralState,
    condition: Condition,
    schedule: &DiffusionSchedule,
    options: &SampleOptions,
    rng: &mut RngStream,
) -> Result<SpectralState> {
    let mut state = start;
    for t in (1..=state.t).rev() {
        state = reverse_step(denoiser, &state, t, condition, schedule, options, rng)?;
    }
    Ok(state)
}

/// Draws one image: terminal state, reverse chain, reconstruction.
pub fn sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    condition: Condition,
    schedule: &DiffusionSchedule,
    meta: StateMeta,
    options: &SampleOptions,
    rng: &mut RngStream,
) -> Result<Sample> {
    let start = init_terminal_state(meta, schedule, rng)?;
    let state0 = reverse_chain(denoiser, start, condition, schedule, options, rng)?;
    let image = reconstruct(&state0)?;
    let clamped = image.clamped();
    Ok(Sample { image, clamped })
}

/// `count` samples on independent streams split from `rng`, in order.
pub fn sample_many<D: Denoiser + ?Sized>(
    denoiser: &D,
    condition: Condition,
    schedule: &DiffusionSchedule,
    meta: StateMeta,
    options: &SampleOptions,
    count: usize,
    rng: &mut RngStream,
) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let mut r = rng.split(i as u64);
            sample(denoiser, condition, schedule, meta, options, &mut r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::forward_trajectory;
    use crate::model::OracleDenoiser;
    use crate::schedule::{make_schedule, ScheduleConfig};
    use crate::spectral::decompose;

    fn image(seed: u64, channels: usize) -> ImageTensor {
        let mut r = RngStream::new(seed);
        let n = 16 * 16 * channels;
        ImageTensor::new(16, 16, channels, (0..n).map(|_| r.uniform()).collect()).unwrap()
    }

    fn schedule_for(s0: &SpectralState, steps: usize) -> DiffusionSchedule {
        let mut s = make_schedule(&ScheduleConfig::for_steps(steps), s0.meta.lf_dims()).unwrap();
        s.calibrate(std::slice::from_ref(s0)).unwrap();
        s
    }

    #[test]
    fn terminal_state_deterministic() {
        let meta = StateMeta::new(16, 16, 1, 1).unwrap();
        let s0 = decompose(&image(1, 1), 1).unwrap();
        let sched = schedule_for(&s0, 8);
        let a = init_terminal_state(meta, &sched, &mut RngStream::new(4)).unwrap();
        let b = init_terminal_state(meta, &sched, &mut RngStream::new(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.t, 8);
    }

    #[test]
    fn terminal_spectrum_std() {
        let meta = StateMeta::new(64, 64, 1, 1).unwrap();
        let mut sched = make_schedule(&ScheduleConfig::for_steps(8), meta.lf_dims()).unwrap();
        sched.spectrum_scale = 2.5;
        let mut rng = RngStream::new(9);
        let (mut sum2, mut n) = (0.0, 0usize);
        while n < 100_000 {
            let s = init_terminal_state(meta, &sched, &mut rng).unwrap();
            for v in s.spectrum[0].re.iter().chain(&s.spectrum[0].im) {
                sum2 += v * v;
                n += 1;
            }
        }
        let std = (sum2 / n as f64).sqrt();
        assert!((std / 2.5 - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn oracle_inverts_in_both_modes() {
        for (channels, steps) in [(1, 1), (1, 4), (3, 32)] {
            let x0 = image(steps as u64, channels);
            let s0 = decompose(&x0, 1).unwrap();
            let sched = schedule_for(&s0, steps);
            let traj = forward_trajectory(&s0, &sched, &mut RngStream::new(2)).unwrap();
            let oracle = OracleDenoiser::new(traj.clone());
            for stochastic in [false, true] {
                for cond in [Condition::Unconditional, Condition::Class(2)] {
                    let end = reverse_chain(
                        &oracle,
                        traj[steps].clone(),
                        cond,
                        &sched,
                        &SampleOptions {
                            stochastic,
                            reverse_variance: None,
                        },
                        &mut RngStream::new(3),
                    )
                    .unwrap();
                    let img = reconstruct(&end).unwrap();
                    assert!(img.max_abs_diff(&x0) <= 1e-6);
                }
            }
        }
    }

    struct Exploding;
    impl Denoiser for Exploding {
        fn denoise(&self, s: &SpectralState, t: usize, _: Condition) -> Result<SpectralState> {
            let mut out = s.clone();
            out.t = t - 1;
            if t == 3 {
                out.hf[0][0].data[0] = f64::NAN;
            }
            Ok(out)
        }
    }

    #[test]
    fn non_finite_reports_step() {
        let meta = StateMeta::new(16, 16, 1, 1).unwrap();
        let s0 = decompose(&image(1, 1), 1).unwrap();
        let sched = schedule_for(&s0, 5);
        let err = sample(
            &Exploding,
            Condition::Unconditional,
            &sched,
            meta,
            &SampleOptions::stochastic(),
            &mut RngStream::new(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 3, .. }), "{err}");
    }

    #[test]
    fn sample_many_deterministic() {
        let meta = StateMeta::new(16, 16, 1, 1).unwrap();
        let s0 = decompose(&image(1, 1), 1).unwrap();
        let sched = schedule_for(&s0, 4);
        let traj = forward_trajectory(&s0, &sched, &mut RngStream::new(2)).unwrap();
        let oracle = OracleDenoiser::new(traj);
        let run = || {
            sample_many(
                &oracle,
                Condition::Unconditional,
                &sched,
                meta,
                &SampleOptions::stochastic(),
                3,
                &mut RngStream::new(7),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reverse_variance_of_identity_denoiser() {
        let s0 = decompose(&image(5, 1), 1).unwrap();
        let sched = schedule_for(&s0, 6);
        struct Copy;
        impl Denoiser for Copy {
            fn denoise(&self, s: &SpectralState, t: usize, _: Condition) -> Result<SpectralState> {
                let mut out = s.clone();
                out.t = t - 1;
                Ok(out)
            }
        }
        let ex = vec![(s0.clone(), Condition::Unconditional)];
        let rv = calibrate_reverse_variance(&Copy, &ex, &sched, &mut RngStream::new(1)).unwrap();
        assert_eq!(rv.spectrum.len(), 6);
        assert!(rv.spectrum.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(rv
            .hf
            .iter()
            .flatten()
            .flatten()
            .all(|v| v.is_finite() && *v >= 0.0));
        assert!(rv
            .hf
            .iter()
            .all(|b| b.len() == 3 && b.iter().all(|p| p.len() == s0.hf[0][0].data.len())));
        assert!(rv.spectrum[0] > 0.0);
    }

    #[test]
    fn symmetric_noise_keeps_symmetry_and_variance() {
        let meta = StateMeta::new(16, 16, 1, 1).unwrap();
        let bins: Vec<usize> = (0..64).collect();
        let mut rng = RngStream::new(8);
        let (mut sum, mut n) = (0.0, 0usize);
        for _ in 0..200 {
            let mut s = SpectralState::zeros(meta, 0);
            add_symmetric_noise(&mut s, &bins, 4.0, &mut rng);
            assert!(s.spectrum[0].hermitian_residue() < 1e-12);
            sum += s.spectrum[0].re.iter().map(|v| v * v).sum::<f64>();
            n += 64;
        }
        assert!((sum / n as f64 / 4.0 - 1.0).abs() < 0.05);
    }
}
