//! Mapping transform planes to displayable [0, 1] images.

use std::path::Path;

use wfdiff_core::io::write_image;
use wfdiff_core::spectral::{ComplexPlane, Plane};
use wfdiff_core::ImageTensor;

use crate::error::CliError;

/// Low band of an L-level pyramid: a [0, 1] image gives LL in [0, 2^L].
pub fn low_band(p: &Plane, levels: usize) -> Plane {
    scaled(p, 1.0 / (1u64 << levels) as f64, 0.0)
}

/// Detail plane of level ℓ (1 = finest), centered on gray.
pub fn detail(p: &Plane, level: usize) -> Plane {
    scaled(p, 1.0 / (1u64 << level) as f64, 0.5)
}

/// log(1 + |X|) normalized to its maximum, DC moved to the center.
pub fn log_magnitude(s: &ComplexPlane) -> Plane {
    let (h, w) = s.dims();
    let mut out = Plane::zeros(h, w);
    let mut max = 0.0f64;
    for u in 0..h {
        for v in 0..w {
            let m = s.get(u, v).norm().ln_1p();
            max = max.max(m);
            out.set((u + h / 2) % h, (v + w / 2) % w, m);
        }
    }
    if max > 0.0 {
        out.data.iter_mut().for_each(|m| *m /= max);
    }
    out
}

fn scaled(p: &Plane, gain: f64, offset: f64) -> Plane {
    Plane {
        data: p.data.iter().map(|v| offset + gain * v).collect(),
        ..p.clone()
    }
}

/// Writes one plane per channel as a PGM (1 channel) or PPM (3 channels).
pub fn write_planes(path: &Path, planes: Vec<Plane>) -> Result<(), CliError> {
    let img = ImageTensor::from_planes(planes)?;
    write_image(path, &img)?;
    Ok(())
}

/// File extension matching an image's channel count.
pub fn extension(channels: usize) -> &'static str {
    if channels == 3 {
        "ppm"
    } else {
        "pgm"
    }
}
