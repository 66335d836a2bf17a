//! Every quantity indexed by the diffusion step.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::spectral::{max_radius, SpectralState};

/// Which end of the spectrum the growing cutoff removes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskDirection {
    /// Bins with ρ ≤ r(t) are removed; the removal front sweeps outward.
    LowFirst,
    /// Bins with ρ ≥ r_max − r(t) are removed; the front sweeps inward, so
    /// the reverse chain restores coarse structure before fine.
    #[default]
    HighFirst,
}

/// How detail planes are noised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HfMode {
    /// x_t = √(1−β_t)·x_{t−1} + √β_t·ε
    #[default]
    VariancePreserving,
    /// x_t = x_{t−1} + √β_t·ε
    Additive,
}

impl FromStr for MaskDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low_first" => Ok(Self::LowFirst),
            "high_first" => Ok(Self::HighFirst),
            _ => Err(Error::Invalid(format!(
                "mask direction must be low_first or high_first, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for MaskDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LowFirst => "low_first",
            Self::HighFirst => "high_first",
        })
    }
}

impl FromStr for HfMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp" => Ok(Self::VariancePreserving),
            "additive" => Ok(Self::Additive),
            _ => Err(Error::Invalid(format!(
                "hf mode must be vp or additive, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for HfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::VariancePreserving => "vp",
            Self::Additive => "additive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Fourier replacement-noise std in units of `spectrum_scale`.
    pub sigma_f: f64,
    pub mask_direction: MaskDirection,
    pub hf_mode: HfMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.05,
            sigma_f: 1.0,
            mask_direction: MaskDirection::HighFirst,
            hf_mode: HfMode::VariancePreserving,
        }
    }
}

impl ScheduleConfig {
    /// Defaults for `steps` diffusion steps. The β range is the 1000-step
    /// range stretched by 1000/T (capped below 1) so that shorter chains still
    /// end near total signal destruction.
    pub fn for_steps(steps: usize) -> Self {
        let base = Self::default();
        let stretch = 1000.0 / steps.max(1) as f64;
        Self {
            steps,
            beta_min: (base.beta_min * stretch).min(0.5),
            beta_max: (base.beta_max * stretch).min(0.999),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub steps: usize,
    /// Cutoff radius per step, length T+1.
    pub radius: Vec<f64>,
    /// β_t at index t−1, length T.
    pub beta: Vec<f64>,
    /// Π_{s≤t}(1−β_s), length T+1.
    pub alpha_bar: Vec<f64>,
    /// Replacement-noise std at index t−1 in units of `spectrum_scale`, length T.
    pub sigma_f: Vec<f64>,
    /// Loss weight at index t−1, length T.
    pub weight: Vec<f64>,
    pub r_max: f64,
    /// RMS spectrum magnitude of a reference batch; sets Fourier noise units.
    pub spectrum_scale: f64,
    /// RMS detail coefficient of a reference batch; sets detail noise units.
    pub hf_scale: f64,
    pub mask_direction: MaskDirection,
    pub hf_mode: HfMode,
}

pub fn make_schedule(
    config: &ScheduleConfig,
    lf_dims: (usize, usize),
) -> Result<DiffusionSchedule> {
    let t_steps = config.steps;
    if t_steps == 0 {
        return Err(Error::Invalid("schedule needs at least one step".into()));
    }
    let (bmin, bmax) = (config.beta_min, config.beta_max);
    let in_unit = |b: f64| b > 0.0 && b < 1.0;
    if !(in_unit(bmin) && in_unit(bmax) && bmin < bmax) {
        return Err(Error::Invalid(format!(
            "need 0 < beta_min < beta_max < 1, got {bmin} and {bmax}"
        )));
    }
    if !(config.sigma_f >= 0.0 && config.sigma_f.is_finite()) {
        return Err(Error::Invalid(
            "sigma_f must be finite and non-negative".into(),
        ));
    }
    let r_max = max_radius(lf_dims.0, lf_dims.1);
    let radius = (0..=t_steps)
        .map(|t| r_max * (t as f64 / t_steps as f64))
        .collect();
    let beta: Vec<f64> = (0..t_steps)
        .map(|i| {
            if t_steps == 1 {
                bmin
            } else {
                bmin + (bmax - bmin) * i as f64 / (t_steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(t_steps + 1);
    alpha_bar.push(1.0);
    for b in &beta {
        let prev = *alpha_bar.last().unwrap();
        alpha_bar.push(prev * (1.0 - b));
    }
    Ok(DiffusionSchedule {
        steps: t_steps,
        radius,
        beta,
        alpha_bar,
        sigma_f: vec![config.sigma_f; t_steps],
        weight: vec![1.0; t_steps],
        r_max,
        spectrum_scale: 1.0,
        hf_scale: 1.0,
        mask_direction: config.mask_direction,
        hf_mode: config.hf_mode,
    })
}

impl DiffusionSchedule {
    fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps {
            return Err(Error::StepRange {
                t,
                lo,
                hi: self.steps,
            });
        }
        Ok(())
    }

    pub fn cutoff_radius(&self, t: usize) -> Result<f64> {
        self.check_step(t, 0)?;
        Ok(self.radius[t])
    }

    /// Whether a bin at radius `rho` is replaced by noise at step `t`.
    /// Removed sets are nested: removed at t implies removed at t+1.
    pub fn is_removed(&self, rho: f64, t: usize) -> bool {
        if t == 0 {
            return false;
        }
        match self.mask_direction {
            MaskDirection::LowFirst => rho <= self.radius[t],
            MaskDirection::HighFirst => rho >= self.r_max - self.radius[t],
        }
    }

    /// β_t for 1 ≤ t ≤ T.
    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn weight_at(&self, t: usize) -> f64 {
        self.weight[t - 1]
    }

    /// Std of each real/imag component of the replacement noise at step t.
    pub fn fourier_noise_std(&self, t: usize) -> f64 {
        self.sigma_f[t - 1] * self.spectrum_scale
    }

    /// Coefficients `(keep, noise)` of one detail-plane step:
    /// `x_t = keep·x_{t−1} + noise·ε`, ε ~ N(0,1).
    pub fn hf_step(&self, t: usize) -> (f64, f64) {
        let b = self.beta_at(t);
        let noise = b.sqrt() * self.hf_scale;
        match self.hf_mode {
            HfMode::VariancePreserving => ((1.0 - b).sqrt(), noise),
            HfMode::Additive => (1.0, noise),
        }
    }

    /// Coefficients `(signal, noise)` of the marginal
    /// `x_t = signal·x_0 + noise·ε` after t steps.
    pub fn hf_marginal(&self, t: usize) -> (f64, f64) {
        match self.hf_mode {
            HfMode::VariancePreserving => {
                let ab = self.alpha_bar[t];
                (ab.sqrt(), (1.0 - ab).sqrt() * self.hf_scale)
            }
            HfMode::Additive => {
                let total: f64 = self.beta[..t].iter().sum();
                (1.0, total.sqrt() * self.hf_scale)
            }
        }
    }

    /// Std of a detail coefficient at `t − 1` given its values at `t` and 0,
    /// `n·s / sqrt(k²n² + s²)` for step `(k, s)` and marginal noise `n` at t − 1.
    /// Zero at t = 1.
    pub fn hf_posterior_std(&self, t: usize) -> f64 {
        let (k, s) = self.hf_step(t);
        let n = self.hf_marginal(t - 1).1;
        let den = (k * k * n * n + s * s).sqrt();
        if den == 0.0 {
            0.0
        } else {
            n * s / den
        }
    }

    /// Weights `(on x_t, on x_0)` of the posterior mean of a detail
    /// coefficient at `t − 1`: `(n²k, s²m) / (k²n² + s²)` for step `(k, s)`
    /// and marginal `(m, n)` at t − 1. At t = 1 this is `(0, 1)`.
    pub fn hf_posterior_mean(&self, t: usize) -> (f64, f64) {
        let (k, s) = self.hf_step(t);
        let (m, n) = self.hf_marginal(t - 1);
        let den = k * k * n * n + s * s;
        if den == 0.0 {
            (1.0 / k, 0.0)
        } else {
            (n * n * k / den, s * s * m / den)
        }
    }

    /// Sets the noise units from clean (t = 0) states.
    pub fn calibrate(&mut self, states: &[SpectralState]) -> Result<()> {
        let (mut spec_pow, mut spec_n, mut hf_pow, mut hf_n) = (0.0, 0usize, 0.0, 0usize);
        for s in states {
            for p in &s.spectrum {
                spec_pow += p.power();
                spec_n += p.len();
            }
            for b in s.hf.iter().flatten() {
                hf_pow += b.energy();
                hf_n += b.data.len();
            }
        }
        if spec_n == 0 || hf_n == 0 {
            return Err(Error::Invalid(
                "calibration needs at least one state".into(),
            ));
        }
        let spec = (spec_pow / spec_n as f64).sqrt();
        let hf = (hf_pow / hf_n as f64).sqrt();
        if !(spec > 0.0 && hf > 0.0 && spec.is_finite() && hf.is_finite()) {
            return Err(Error::Invalid(
                "calibration batch has no spectral or detail energy".into(),
            ));
        }
        self.spectrum_scale = spec;
        self.hf_scale = hf;
        Ok(())
    }
}

/// Half-cosine decay from `base_lr` at step 0 to zero at `total_steps`.
pub fn cosine_lr(base_lr: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_for_thousand_steps() {
        let s = make_schedule(&ScheduleConfig::default(), (16, 16)).unwrap();
        assert_eq!(s.radius.len(), 1001);
        assert_eq!(s.beta.len(), 1000);
        assert_eq!(s.alpha_bar.len(), 1001);
        assert_eq!(s.sigma_f.len(), 1000);
        assert_eq!(s.weight.len(), 1000);
    }

    #[test]
    fn linear_ramp_of_radii() {
        let cfg = ScheduleConfig {
            steps: 4,
            ..ScheduleConfig::default()
        };
        let s = make_schedule(&cfg, (16, 16)).unwrap();
        let r = s.r_max;
        assert_eq!(r, 128f64.sqrt());
        let expect = [0.0, r / 4.0, r / 2.0, 3.0 * r / 4.0, r];
        for (a, b) in s.radius.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s.cutoff_radius(0).unwrap(), 0.0);
        assert_eq!(s.cutoff_radius(4).unwrap(), r);
        assert!((s.cutoff_radius(2).unwrap() - r / 2.0).abs() < 1e-15);
        assert!(matches!(
            s.cutoff_radius(5),
            Err(Error::StepRange { t: 5, .. })
        ));
    }

    #[test]
    fn default_destroys_signal() {
        let s = make_schedule(&ScheduleConfig::default(), (16, 16)).unwrap();
        // Running product evaluated independently in log space.
        let log_ab: f64 = (0..1000)
            .map(|i| (1.0 - (1e-4 + (0.05 - 1e-4) * i as f64 / 999.0)).ln())
            .sum();
        assert!(log_ab.exp() < 1e-4);
        assert!((s.alpha_bar[1000] - log_ab.exp()).abs() < 1e-15);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(s.beta.iter().all(|&b| b > 0.0 && b < 1.0));
    }

    #[test]
    fn stretched_defaults_for_short_chains() {
        for steps in [1, 4, 32, 64] {
            let s = make_schedule(&ScheduleConfig::for_steps(steps), (8, 8)).unwrap();
            assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
            assert!(s.radius.windows(2).all(|w| w[1] >= w[0]));
        }
        let s = make_schedule(&ScheduleConfig::for_steps(64), (8, 8)).unwrap();
        assert!(s.alpha_bar[64] < 1e-4);
    }

    #[test]
    fn invalid_ranges_rejected() {
        let bad = [
            ScheduleConfig {
                steps: 0,
                ..Default::default()
            },
            ScheduleConfig {
                beta_min: 0.1,
                beta_max: 0.05,
                ..Default::default()
            },
            ScheduleConfig {
                beta_max: 1.0,
                ..Default::default()
            },
            ScheduleConfig {
                beta_min: 0.0,
                ..Default::default()
            },
            ScheduleConfig {
                sigma_f: -1.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(make_schedule(&cfg, (8, 8)).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn deterministic_construction() {
        let a = make_schedule(&ScheduleConfig::default(), (8, 8)).unwrap();
        let b = make_schedule(&ScheduleConfig::default(), (8, 8)).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.alpha_bar), bits(&b.alpha_bar));
        assert_eq!(bits(&a.radius), bits(&b.radius));
    }

    #[test]
    fn cosine_curve() {
        assert_eq!(cosine_lr(0.1, 0, 100), 0.1);
        assert!(cosine_lr(0.1, 100, 100).abs() < 1e-17);
        assert!((cosine_lr(0.1, 50, 100) - 0.05).abs() < 1e-17);
    }

    #[test]
    fn mask_nesting_both_directions() {
        for dir in [MaskDirection::LowFirst, MaskDirection::HighFirst] {
            let cfg = ScheduleConfig {
                steps: 16,
                mask_direction: dir,
                ..ScheduleConfig::default()
            };
            let s = make_schedule(&cfg, (8, 8)).unwrap();
            let grid = crate::spectral::radial_distance_grid(8, 8);
            for t in 1..=16 {
                for &rho in &grid.data {
                    if s.is_removed(rho, t - 1) {
                        assert!(s.is_removed(rho, t));
                    }
                }
            }
            assert!(grid.data.iter().all(|&rho| s.is_removed(rho, 16)));
            assert!(grid.data.iter().all(|&rho| !s.is_removed(rho, 0)));
        }
    }

    #[test]
    fn parse_enums() {
        assert_eq!(
            "high_first".parse::<MaskDirection>().unwrap(),
            MaskDirection::HighFirst
        );
        assert_eq!("additive".parse::<HfMode>().unwrap(), HfMode::Additive);
        assert!("sideways".parse::<MaskDirection>().is_err());
    }

    #[test]
    fn posterior_mean_matches_ddpm_form() {
        let mut s = make_schedule(&ScheduleConfig::for_steps(32), (8, 8)).unwrap();
        s.hf_scale = 0.3;
        assert_eq!(s.hf_posterior_mean(1), (0.0, 1.0));
        for t in [2, 10, 32] {
            let (ab, ab1, b) = (s.alpha_bar[t], s.alpha_bar[t - 1], s.beta_at(t));
            let (cx, c0) = s.hf_posterior_mean(t);
            assert!((c0 - ab1.sqrt() * b / (1.0 - ab)).abs() < 1e-14);
            assert!((cx - (1.0 - b).sqrt() * (1.0 - ab1) / (1.0 - ab)).abs() < 1e-14);
        }
    }

    #[test]
    fn posterior_std_matches_ddpm_form() {
        let mut s = make_schedule(&ScheduleConfig::for_steps(32), (8, 8)).unwrap();
        s.hf_scale = 0.3;
        assert_eq!(s.hf_posterior_std(1), 0.0);
        for t in [2, 10, 32] {
            let tilde = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta_at(t);
            assert!((s.hf_posterior_std(t) - tilde.sqrt() * 0.3).abs() < 1e-14);
        }
    }
}
