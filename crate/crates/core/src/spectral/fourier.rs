//! 2D discrete Fourier transform.
//!
//! Convention: the forward transform is unnormalized,
//! `X[u,v] = Σ x[m,n] exp(-2πi(um/M + vn/N))`, and the inverse carries the
//! full `1/(MN)` factor. Only power-of-two sides are supported by the fast
//! path; [`dft2_reference`] evaluates the sum directly and exists to check it.

use num_complex::Complex64;

use super::image::Plane;
use crate::error::{Error, Result};

/// Complex 2D array as two real planes of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPlane {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexPlane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        let k = u * self.width + v;
        Complex64::new(self.re[k], self.im[k])
    }

    #[inline]
    pub fn put(&mut self, u: usize, v: usize, z: Complex64) {
        let k = u * self.width + v;
        self.re[k] = z.re;
        self.im[k] = z.im;
    }

    fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    fn from_complex(height: usize, width: usize, z: &[Complex64]) -> Self {
        Self {
            height,
            width,
            re: z.iter().map(|c| c.re).collect(),
            im: z.iter().map(|c| c.im).collect(),
        }
    }

    pub fn power(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .sum()
    }

    /// Largest deviation from conjugate symmetry, `max |S[u,v] - conj(S[-u,-v])|`.
    pub fn hermitian_residue(&self) -> f64 {
        let (m, n) = self.dims();
        let mut worst = 0.0f64;
        for u in 0..m {
            for v in 0..n {
                let mirror = self.get((m - u) % m, (n - v) % n).conj();
                worst = worst.max((self.get(u, v) - mirror).norm());
            }
        }
        worst
    }
}

fn check_pow2(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::Sizing(format!(
            "FFT needs power-of-two sides, got {h}x{w}"
        )));
    }
    Ok(())
}

/// In-place iterative radix-2 transform. `inverse` flips the twiddle sign but
/// does not scale.
fn fft1d(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * std::f64::consts::TAU / len as f64;
        // Twiddles computed directly per index rather than by repeated
        // multiplication so the error does not accumulate with len.
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, step * k as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn fft2_in_place(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    for row in data.chunks_mut(w) {
        fft1d(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = data[i * w + j];
        }
        fft1d(&mut col, inverse);
        for i in 0..h {
            data[i * w + j] = col[i];
        }
    }
}

pub fn fft2(plane: &Plane) -> Result<ComplexPlane> {
    check_pow2(plane.height, plane.width)?;
    let mut data: Vec<Complex64> = plane.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut data, plane.height, plane.width, false);
    Ok(ComplexPlane::from_complex(plane.height, plane.width, &data))
}

/// Result of an inverse transform: the real part plus the largest discarded
/// imaginary magnitude.
#[derive(Debug, Clone)]
pub struct InverseFft {
    pub plane: Plane,
    pub max_imag: f64,
}

pub fn ifft2(spectrum: &ComplexPlane) -> Result<InverseFft> {
    let (h, w) = spectrum.dims();
    check_pow2(h, w)?;
    if spectrum.im.len() != spectrum.re.len() || spectrum.re.len() != h * w {
        return Err(Error::Shape("spectrum planes disagree in size".into()));
    }
    let mut data = spectrum.to_complex();
    fft2_in_place(&mut data, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    let mut max_imag = 0.0f64;
    let real = data
        .iter()
        .map(|z| {
            let residue = (z.im * scale).abs();
            // A NaN residue sticks.
            if residue.is_nan() || residue > max_imag {
                max_imag = residue;
            }
            z.re * scale
        })
        .collect();
    Ok(InverseFft {
        plane: Plane::from_vec(h, w, real)?,
        max_imag,
    })
}

/// Largest side accepted by [`dft2_reference`].
pub const REFERENCE_DFT_MAX: usize = 32;

/// Direct O(M²N²) evaluation of the forward DFT sum; test oracle for [`fft2`].
pub fn dft2_reference(plane: &Plane) -> Result<ComplexPlane> {
    let (m, n) = plane.dims();
    if m > REFERENCE_DFT_MAX || n > REFERENCE_DFT_MAX {
        return Err(Error::Sizing(format!(
            "reference DFT limited to {REFERENCE_DFT_MAX}x{REFERENCE_DFT_MAX}, got {m}x{n}"
        )));
    }
    let mut out = ComplexPlane::zeros(m, n);
    for u in 0..m {
        for v in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..m {
                for c in 0..n {
                    // Reduce the phase index exactly in integers before scaling.
                    let pu = (u * r % m) as f64 / m as f64;
                    let pv = (v * c % n) as f64 / n as f64;
                    let angle = -std::f64::consts::TAU * (pu + pv);
                    acc += Complex64::from_polar(plane.at(r, c), angle);
                }
            }
            out.put(u, v, acc);
        }
    }
    Ok(out)
}

/// Projects onto conjugate-symmetric spectra:
/// `S'[u,v] = (S[u,v] + conj(S[-u mod M, -v mod N])) / 2`.
pub fn hermitian_symmetrize(spectrum: &ComplexPlane) -> ComplexPlane {
    let (m, n) = spectrum.dims();
    let mut out = ComplexPlane::zeros(m, n);
    for u in 0..m {
        for v in 0..n {
            let mirror = spectrum.get((m - u) % m, (n - v) % n).conj();
            out.put(u, v, (spectrum.get(u, v) + mirror) * 0.5);
        }
    }
    out
}
