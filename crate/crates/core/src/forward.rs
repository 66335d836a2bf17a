//! The forward corruption chain.
//!
//! One step replaces every Fourier bin inside the removal region at `t` with
//! fresh complex Gaussian noise and leaves the other bins untouched; detail
//! planes are attenuated and noised. Random draws are consumed in a fixed
//! order: for each channel, first the removed bins in row-major order (real
//! then imaginary part), then every detail coefficient plane by plane.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::schedule::DiffusionSchedule;
use crate::spectral::{radial_distance_grid, SpectralState};

/// Boolean removal mask over the low-band spectrum at step `t`, row-major.
pub fn removal_mask(schedule: &DiffusionSchedule, dims: (usize, usize), t: usize) -> Vec<bool> {
    radial_distance_grid(dims.0, dims.1)
        .data
        .iter()
        .map(|&rho| schedule.is_removed(rho, t))
        .collect()
}

fn check_schedule_fits(state: &SpectralState, schedule: &DiffusionSchedule) -> Result<()> {
    let (h, w) = state.meta.lf_dims();
    let r = crate::spectral::max_radius(h, w);
    if r != schedule.r_max {
        return Err(Error::Shape(format!(
            "schedule built for corner radius {}, state has {r}",
            schedule.r_max
        )));
    }
    Ok(())
}

/// Replaces masked bins with noise of std `std` and maps every detail
/// coefficient to `keep·x + noise·ε`.
pub(crate) fn apply(
    state: &mut SpectralState,
    mask: &[bool],
    std: f64,
    keep: f64,
    noise: f64,
    rng: &mut RngStream,
) {
    for (spec, bands) in state.spectrum.iter_mut().zip(state.hf.iter_mut()) {
        for (k, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            spec.re[k] = std * rng.normal();
            spec.im[k] = std * rng.normal();
        }
        for band in bands.iter_mut() {
            for v in band.data.iter_mut() {
                *v = keep * *v + noise * rng.normal();
            }
        }
    }
}

/// One application of the corruption operator, taking the state from t−1 to t.
pub fn corrupt_step(
    state: &SpectralState,
    schedule: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<SpectralState> {
    if state.t >= schedule.steps {
        return Err(Error::StepRange {
            t: state.t + 1,
            lo: 1,
            hi: schedule.steps,
        });
    }
    check_schedule_fits(state, schedule)?;
    let t = state.t + 1;
    let mask = removal_mask(schedule, state.meta.lf_dims(), t);
    let (keep, noise) = schedule.hf_step(t);
    let mut next = state.clone();
    apply(
        &mut next,
        &mask,
        schedule.fourier_noise_std(t),
        keep,
        noise,
        rng,
    );
    next.t = t;
    Ok(next)
}

/// Jumps from the clean state directly to step `t`.
///
/// The removal region at `t` contains every earlier region, so a single
/// replacement gives the same spectrum distribution as `t` iterated steps;
/// detail planes use the closed-form marginal.
pub fn corrupt_to(
    state0: &SpectralState,
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<SpectralState> {
    if state0.t != 0 {
        return Err(Error::Invalid(format!(
            "corrupt_to starts from t = 0, got t = {}",
            state0.t
        )));
    }
    if t > schedule.steps {
        return Err(Error::StepRange {
            t,
            lo: 0,
            hi: schedule.steps,
        });
    }
    check_schedule_fits(state0, schedule)?;
    if t == 0 {
        return Ok(state0.clone());
    }
    let mask = removal_mask(schedule, state0.meta.lf_dims(), t);
    let (signal, noise) = schedule.hf_marginal(t);
    let mut out = state0.clone();
    apply(
        &mut out,
        &mask,
        schedule.fourier_noise_std(t),
        signal,
        noise,
        rng,
    );
    out.t = t;
    Ok(out)
}

/// The whole chain `[state_0, state_1, …, state_T]`, each element derived only
/// from its predecessor.
pub fn forward_trajectory(
    state0: &SpectralState,
    schedule: &DiffusionSchedule,
    rng: &mut RngStream,
) -> Result<Vec<SpectralState>> {
    if state0.t != 0 {
        return Err(Error::Invalid("trajectory must start at t = 0".into()));
    }
    let mut out = Vec::with_capacity(schedule.steps + 1);
    out.push(state0.clone());
    for _ in 0..schedule.steps {
        let next = corrupt_step(out.last().unwrap(), schedule, rng)?;
        out.push(next);
    }
    Ok(out)
}
