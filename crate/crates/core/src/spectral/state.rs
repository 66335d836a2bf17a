use super::fourier::{fft2, hermitian_symmetrize, ifft2, ComplexPlane};
use super::image::{ImageTensor, Plane};
use super::wavelet::{check_dyadic, dwt2_haar, idwt2_haar, WaveletPyramid};
use crate::error::{Error, Result};

/// Imaginary residue above which an inverse transform is treated as broken.
pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

/// Original image geometry, carried unchanged through every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateMeta {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub levels: usize,
}

impl StateMeta {
    pub fn new(height: usize, width: usize, channels: usize, levels: usize) -> Result<Self> {
        check_dyadic(height, width, levels)?;
        if channels == 0 {
            return Err(Error::Shape("zero channels".into()));
        }
        let meta = Self {
            height,
            width,
            channels,
            levels,
        };
        let (lh, lw) = meta.lf_dims();
        if !lh.is_power_of_two() || !lw.is_power_of_two() {
            return Err(Error::Sizing(format!(
                "low band {lh}x{lw} is not a power of two"
            )));
        }
        Ok(meta)
    }

    pub fn lf_dims(&self) -> (usize, usize) {
        (self.height >> self.levels, self.width >> self.levels)
    }

    pub fn hf_dims(&self, k: usize) -> (usize, usize) {
        let level = k / 3 + 1;
        (self.height >> level, self.width >> level)
    }

    pub fn bands(&self) -> usize {
        3 * self.levels
    }

    /// Number of real components in a state: 2 per spectrum bin plus every
    /// detail coefficient.
    pub fn components(&self) -> usize {
        let (lh, lw) = self.lf_dims();
        let hf: usize = (0..self.bands())
            .map(|k| {
                let (h, w) = self.hf_dims(k);
                h * w
            })
            .sum();
        self.channels * (2 * lh * lw + hf)
    }
}

/// The diffusion latent at step `t`: the Fourier image of the low band plus
/// the wavelet detail planes, per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub t: usize,
    pub spectrum: Vec<ComplexPlane>,
    pub hf: Vec<Vec<Plane>>,
    pub meta: StateMeta,
}

impl SpectralState {
    pub fn zeros(meta: StateMeta, t: usize) -> Self {
        let (lh, lw) = meta.lf_dims();
        Self {
            t,
            spectrum: (0..meta.channels)
                .map(|_| ComplexPlane::zeros(lh, lw))
                .collect(),
            hf: (0..meta.channels)
                .map(|_| {
                    (0..meta.bands())
                        .map(|k| {
                            let (h, w) = meta.hf_dims(k);
                            Plane::zeros(h, w)
                        })
                        .collect()
                })
                .collect(),
            meta,
        }
    }

    /// Checks that every plane has the size `meta` implies.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if self.spectrum.len() != m.channels || self.hf.len() != m.channels {
            return Err(Error::Shape(
                "state channel count disagrees with meta".into(),
            ));
        }
        for (s, bands) in self.spectrum.iter().zip(&self.hf) {
            if s.dims() != m.lf_dims() || s.re.len() != s.im.len() {
                return Err(Error::Shape(format!(
                    "spectrum is {:?}, expected {:?}",
                    s.dims(),
                    m.lf_dims()
                )));
            }
            if bands.len() != m.bands() {
                return Err(Error::Shape("wrong number of detail planes".into()));
            }
            for (k, b) in bands.iter().enumerate() {
                if b.dims() != m.hf_dims(k) {
                    return Err(Error::Shape(format!("detail plane {k} has wrong size")));
                }
            }
        }
        Ok(())
    }

    /// All real components in canonical order: per channel `re`, `im`, then
    /// each detail plane.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.meta.components());
        for (s, bands) in self.spectrum.iter().zip(&self.hf) {
            out.extend_from_slice(&s.re);
            out.extend_from_slice(&s.im);
            for b in bands {
                out.extend_from_slice(&b.data);
            }
        }
        out
    }

    /// Inverse of [`SpectralState::to_flat`].
    pub fn from_flat(meta: StateMeta, t: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != meta.components() {
            return Err(Error::Shape(format!(
                "expected {} components, got {}",
                meta.components(),
                flat.len()
            )));
        }
        let mut s = Self::zeros(meta, t);
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        for (spec, bands) in s.spectrum.iter_mut().zip(s.hf.iter_mut()) {
            take(&mut spec.re);
            take(&mut spec.im);
            for b in bands {
                take(&mut b.data);
            }
        }
        Ok(s)
    }

    /// `a * self + b * other`, keeping this state's `t`.
    pub fn lincomb(&self, a: f64, other: &SpectralState, b: f64) -> Result<SpectralState> {
        if self.meta != other.meta {
            return Err(Error::Shape("states have different geometry".into()));
        }
        let x = self.to_flat();
        let y = other.to_flat();
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        Self::from_flat(self.meta, self.t, &z)
    }

    pub fn max_abs_diff(&self, other: &SpectralState) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Wavelet analysis followed by a DFT of each channel's low band. Returns the
/// state at `t = 0`.
pub fn decompose(image: &ImageTensor, levels: usize) -> Result<SpectralState> {
    let meta = StateMeta::new(image.height, image.width, image.channels, levels)?;
    let WaveletPyramid { lf, hf, .. } = dwt2_haar(image, levels)?;
    let spectrum = lf.iter().map(fft2).collect::<Result<Vec<_>>>()?;
    Ok(SpectralState {
        t: 0,
        spectrum,
        hf,
        meta,
    })
}

/// Symmetrizes each spectrum, inverts it to the low band and runs wavelet
/// synthesis. The result is not clamped.
pub fn reconstruct(state: &SpectralState) -> Result<ImageTensor> {
    state.validate()?;
    let mut lf = Vec::with_capacity(state.meta.channels);
    for s in &state.spectrum {
        let inv = ifft2(&hermitian_symmetrize(s))?;
        if inv.max_imag.is_nan() || inv.max_imag > SYMMETRY_TOLERANCE {
            return Err(Error::SymmetryViolation {
                residue: inv.max_imag,
            });
        }
        lf.push(inv.plane);
    }
    idwt2_haar(&WaveletPyramid {
        levels: state.meta.levels,
        lf,
        hf: state.hf.clone(),
    })
}
