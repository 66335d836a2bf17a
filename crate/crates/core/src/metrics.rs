//! Quality and diagnostic measurements: PSNR, correlation, wavelet band
//! energies and azimuthally averaged power spectra.

use crate::error::{Error, Result};
use crate::spectral::{fft2, max_radius, radial_distance_grid, ImageTensor, Plane, WaveletPyramid};

fn check_same(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    Ok(())
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// `10·log10(1 / MSE)` for [0, 1] images; `+∞` when the images are identical.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

/// Pearson correlation over all samples; 0 when either image is constant.
pub fn correlation(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    let n = a.data.len() as f64;
    let ma = a.data.iter().sum::<f64>() / n;
    let mb = b.data.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data.iter().zip(&b.data) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    let den = (saa * sbb).sqrt();
    Ok(if den == 0.0 { 0.0 } else { sab / den })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpectrum {
    /// Mean |X|² per bin, zero for empty bins.
    pub mean: Vec<f64>,
    /// Summed |X|² per bin.
    pub total: Vec<f64>,
    pub counts: Vec<usize>,
    pub empty: Vec<bool>,
    pub bin_width: f64,
}

impl RadialSpectrum {
    pub fn nbins(&self) -> usize {
        self.mean.len()
    }
}

/// Bin index of radius `rho` among `nbins` uniform bins over `[0, r_max]`;
/// the corner radius falls in the last bin.
pub fn radial_bin(rho: f64, r_max: f64, nbins: usize) -> usize {
    if r_max == 0.0 {
        return 0;
    }
    ((rho / r_max * nbins as f64) as usize).min(nbins - 1)
}

/// |fft2(plane)|² grouped by the distance of each bin from DC.
pub fn radial_power_spectrum(plane: &Plane, nbins: usize) -> Result<RadialSpectrum> {
    if nbins < 2 {
        return Err(Error::Invalid(format!("need at least 2 bins, got {nbins}")));
    }
    let spec = fft2(plane)?;
    let grid = radial_distance_grid(plane.height, plane.width);
    let r_max = max_radius(plane.height, plane.width);
    let mut total = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for (k, &rho) in grid.data.iter().enumerate() {
        let b = radial_bin(rho, r_max, nbins);
        total[b] += spec.re[k] * spec.re[k] + spec.im[k] * spec.im[k];
        counts[b] += 1;
    }
    let mean = total
        .iter()
        .zip(&counts)
        .map(|(&t, &c)| if c == 0 { 0.0 } else { t / c as f64 })
        .collect();
    Ok(RadialSpectrum {
        mean,
        empty: counts.iter().map(|&c| c == 0).collect(),
        total,
        counts,
        bin_width: r_max / nbins as f64,
    })
}

/// Sum of squares of each band of a pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEnergy {
    /// Per channel.
    pub lf: Vec<f64>,
    /// Per channel, in pyramid order (finest level first, LH, HL, HH).
    pub hf: Vec<Vec<f64>>,
}

impl BandEnergy {
    pub fn total(&self) -> f64 {
        self.lf.iter().sum::<f64>() + self.hf.iter().flatten().sum::<f64>()
    }

    /// All energies flattened: per channel, lf then the detail bands.
    pub fn flat(&self) -> Vec<f64> {
        self.lf
            .iter()
            .zip(&self.hf)
            .flat_map(|(lf, hf)| std::iter::once(*lf).chain(hf.iter().copied()))
            .collect()
    }
}

pub fn band_energy(pyramid: &WaveletPyramid) -> BandEnergy {
    BandEnergy {
        lf: pyramid.lf.iter().map(Plane::energy).collect(),
        hf: pyramid
            .hf
            .iter()
            .map(|bands| bands.iter().map(Plane::energy).collect())
            .collect(),
    }
}

/// Element-wise mean of equally long vectors.
pub fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len().max(1) as f64;
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n)
        .collect()
}
