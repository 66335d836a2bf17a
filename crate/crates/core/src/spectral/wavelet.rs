//! Orthonormal 2D Haar analysis and synthesis.
//!
//! For every 2×2 block `[a b; c d]` one analysis step produces
//!
//! ```text
//! LL = (a + b + c + d) / 2      LH = (a - b + c - d) / 2
//! HL = (a + b - c - d) / 2      HH = (a - b - c + d) / 2
//! ```
//!
//! Multi-level transforms recurse on LL. The factor 1/2 makes the map
//! orthonormal, so coefficient energy equals pixel energy.

use super::image::{ImageTensor, Plane};
use crate::error::{Error, Result};

/// Low band plus `3 * levels` detail planes per channel.
///
/// `hf[c]` lists channel `c`'s detail planes finest level first, each level
/// contributing `[LH, HL, HH]`. Level ℓ planes are (H/2^ℓ)×(W/2^ℓ).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub levels: usize,
    pub lf: Vec<Plane>,
    pub hf: Vec<Vec<Plane>>,
}

impl WaveletPyramid {
    pub fn channels(&self) -> usize {
        self.lf.len()
    }

    /// K = 3L.
    pub fn bands_per_channel(&self) -> usize {
        3 * self.levels
    }

    pub fn energy(&self) -> f64 {
        self.lf.iter().map(Plane::energy).sum::<f64>()
            + self.hf.iter().flatten().map(Plane::energy).sum::<f64>()
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if self.levels == 0 {
            return Err(Error::Shape("pyramid has zero levels".into()));
        }
        if self.hf.len() != self.lf.len() || self.lf.is_empty() {
            return Err(Error::Shape("pyramid channel counts disagree".into()));
        }
        let (lh, lw) = self.lf[0].dims();
        for (lf, bands) in self.lf.iter().zip(&self.hf) {
            if lf.dims() != (lh, lw) {
                return Err(Error::Shape("low bands differ in size".into()));
            }
            if bands.len() != 3 * self.levels {
                return Err(Error::Shape(format!(
                    "expected {} detail planes, found {}",
                    3 * self.levels,
                    bands.len()
                )));
            }
            for (k, band) in bands.iter().enumerate() {
                let shift = self.levels - 1 - k / 3;
                let expect = (lh << shift, lw << shift);
                if band.dims() != expect {
                    return Err(Error::Shape(format!(
                        "detail plane {k} is {:?}, expected {:?}",
                        band.dims(),
                        expect
                    )));
                }
            }
        }
        Ok((lh << self.levels, lw << self.levels))
    }
}

/// Checks that `h`×`w` can be halved `levels` times.
pub fn check_dyadic(h: usize, w: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::Sizing("levels must be at least 1".into()));
    }
    let unit = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| Error::Sizing(format!("levels {levels} too deep")))?;
    if h == 0 || w == 0 || !h.is_multiple_of(unit) || !w.is_multiple_of(unit) {
        return Err(Error::Sizing(format!(
            "{h}x{w} is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

/// One analysis step: returns [LL, LH, HL, HH].
fn analyze(p: &Plane) -> [Plane; 4] {
    let (h2, w2) = (p.height / 2, p.width / 2);
    let mut out = [
        Plane::zeros(h2, w2),
        Plane::zeros(h2, w2),
        Plane::zeros(h2, w2),
        Plane::zeros(h2, w2),
    ];
    for i in 0..h2 {
        for j in 0..w2 {
            let a = p.at(2 * i, 2 * j);
            let b = p.at(2 * i, 2 * j + 1);
            let c = p.at(2 * i + 1, 2 * j);
            let d = p.at(2 * i + 1, 2 * j + 1);
            let k = i * w2 + j;
            out[0].data[k] = (a + b + c + d) * 0.5;
            out[1].data[k] = (a - b + c - d) * 0.5;
            out[2].data[k] = (a + b - c - d) * 0.5;
            out[3].data[k] = (a - b - c + d) * 0.5;
        }
    }
    out
}

fn synthesize(ll: &Plane, lh: &Plane, hl: &Plane, hh: &Plane) -> Plane {
    let (h2, w2) = ll.dims();
    let mut out = Plane::zeros(2 * h2, 2 * w2);
    for i in 0..h2 {
        for j in 0..w2 {
            let k = i * w2 + j;
            let (s, x, y, z) = (ll.data[k], lh.data[k], hl.data[k], hh.data[k]);
            out.set(2 * i, 2 * j, (s + x + y + z) * 0.5);
            out.set(2 * i, 2 * j + 1, (s - x + y - z) * 0.5);
            out.set(2 * i + 1, 2 * j, (s + x - y - z) * 0.5);
            out.set(2 * i + 1, 2 * j + 1, (s - x - y + z) * 0.5);
        }
    }
    out
}

pub fn dwt2_haar(image: &ImageTensor, levels: usize) -> Result<WaveletPyramid> {
    check_dyadic(image.height, image.width, levels)?;
    let mut lf = Vec::with_capacity(image.channels);
    let mut hf = Vec::with_capacity(image.channels);
    for c in 0..image.channels {
        let mut current = image.plane(c);
        let mut bands = Vec::with_capacity(3 * levels);
        for _ in 0..levels {
            let [ll, lh, hl, hh] = analyze(&current);
            bands.extend([lh, hl, hh]);
            current = ll;
        }
        lf.push(current);
        hf.push(bands);
    }
    Ok(WaveletPyramid { levels, lf, hf })
}

pub fn idwt2_haar(pyramid: &WaveletPyramid) -> Result<ImageTensor> {
    pyramid.validate()?;
    let mut planes = Vec::with_capacity(pyramid.channels());
    for (lf, bands) in pyramid.lf.iter().zip(&pyramid.hf) {
        let mut current = lf.clone();
        for level in (0..pyramid.levels).rev() {
            let b = &bands[3 * level..3 * level + 3];
            current = synthesize(&current, &b[0], &b[1], &b[2]);
        }
        planes.push(current);
    }
    ImageTensor::from_planes(planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn block(v: [f64; 4]) -> ImageTensor {
        ImageTensor::new(2, 2, 1, v.to_vec()).unwrap()
    }

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageTensor {
        let mut r = RngStream::new(seed);
        let data = (0..h * w * c).map(|_| r.uniform()).collect();
        ImageTensor::new(h, w, c, data).unwrap()
    }

    #[test]
    fn constant_block_has_no_detail() {
        let p = dwt2_haar(&block([1.0; 4]), 1).unwrap();
        assert_eq!(p.lf[0].data, vec![2.0]);
        for band in &p.hf[0] {
            assert_eq!(band.data, vec![0.0]);
        }
    }

    #[test]
    fn hand_evaluated_block() {
        let p = dwt2_haar(&block([1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        assert_eq!(p.lf[0].data, vec![5.0]);
        assert_eq!(p.hf[0][0].data, vec![-1.0]);
        assert_eq!(p.hf[0][1].data, vec![-2.0]);
        assert_eq!(p.hf[0][2].data, vec![0.0]);
    }

    #[test]
    fn inverse_of_hand_cases() {
        let mk = |ll: f64, lh: f64, hl: f64, hh: f64| WaveletPyramid {
            levels: 1,
            lf: vec![Plane::from_vec(1, 1, vec![ll]).unwrap()],
            hf: vec![vec![
                Plane::from_vec(1, 1, vec![lh]).unwrap(),
                Plane::from_vec(1, 1, vec![hl]).unwrap(),
                Plane::from_vec(1, 1, vec![hh]).unwrap(),
            ]],
        };
        assert_eq!(
            idwt2_haar(&mk(2.0, 0.0, 0.0, 0.0)).unwrap().data,
            vec![1.0; 4]
        );
        assert_eq!(
            idwt2_haar(&mk(5.0, -1.0, -2.0, 0.0)).unwrap().data,
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn two_level_plane_sizes() {
        let p = dwt2_haar(&random_image(64, 64, 1, 1), 2).unwrap();
        assert_eq!(p.lf[0].dims(), (16, 16));
        let dims: Vec<_> = p.hf[0].iter().map(Plane::dims).collect();
        assert_eq!(
            dims,
            vec![(32, 32), (32, 32), (32, 32), (16, 16), (16, 16), (16, 16)]
        );
        assert_eq!(p.bands_per_channel(), 6);
    }

    #[test]
    fn rejects_non_dyadic_sizes() {
        let img = random_image(12, 12, 1, 2);
        assert!(dwt2_haar(&img, 2).is_ok());
        assert!(matches!(dwt2_haar(&img, 3), Err(Error::Sizing(_))));
        assert!(matches!(dwt2_haar(&img, 0), Err(Error::Sizing(_))));
    }

    #[test]
    fn rejects_inconsistent_pyramid() {
        let mut p = dwt2_haar(&random_image(8, 8, 1, 3), 1).unwrap();
        p.hf[0][1] = Plane::zeros(2, 2);
        assert!(matches!(idwt2_haar(&p), Err(Error::Shape(_))));
        p.hf[0].pop();
        assert!(idwt2_haar(&p).is_err());
    }

    #[test]
    fn perfect_reconstruction_and_energy() {
        for (seed, levels) in [(10, 1), (11, 2), (12, 3)] {
            let img = random_image(32, 16, 3, seed);
            let p = dwt2_haar(&img, levels).unwrap();
            let back = idwt2_haar(&p).unwrap();
            assert!(back.max_abs_diff(&img) <= 1e-12);
            let e: f64 = img.data.iter().map(|v| v * v).sum();
            assert!(((p.energy() - e) / e).abs() <= 1e-12);
        }
    }
}
