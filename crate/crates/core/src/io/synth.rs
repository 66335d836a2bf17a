//! Deterministic synthetic shapes: anti-aliased disks, rectangles and
//! Gaussian blobs on a black background.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::spectral::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Rect,
    Blob,
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "disk" => Ok(Self::Disk),
            "rect" => Ok(Self::Rect),
            "blob" => Ok(Self::Blob),
            other => Err(Error::Invalid(format!(
                "unknown shape kind {other:?} (disk, rect, blob)"
            ))),
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Disk => "disk",
            Self::Rect => "rect",
            Self::Blob => "blob",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    pub kinds: Vec<ShapeKind>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 192,
            size: 16,
            channels: 1,
            kinds: vec![ShapeKind::Disk, ShapeKind::Rect, ShapeKind::Blob],
            seed: 1,
        }
    }
}

/// One generated image with its class (the index of its kind in the spec).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub class: usize,
}

/// Sub-pixel grid used for anti-aliasing coverage.
const SUPERSAMPLE: usize = 4;

fn coverage(size: usize, inside: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let py = y as f64 + (sy as f64 + 0.5) * step;
                    let px = x as f64 + (sx as f64 + 0.5) * step;
                    if inside(py, px) {
                        hits += 1;
                    }
                }
            }
            out[y * size + x] = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    out
}

fn draw(kind: ShapeKind, size: usize, rng: &mut RngStream) -> Vec<f64> {
    let s = size as f64;
    let intensity = rng.uniform_range(0.5, 1.0);
    let cy = rng.uniform_range(0.3 * s, 0.7 * s);
    let cx = rng.uniform_range(0.3 * s, 0.7 * s);
    let shape = match kind {
        ShapeKind::Disk => {
            let r = rng.uniform_range(0.15 * s, 0.3 * s);
            coverage(size, |y, x| (y - cy).powi(2) + (x - cx).powi(2) <= r * r)
        }
        ShapeKind::Rect => {
            let hh = rng.uniform_range(0.1 * s, 0.3 * s);
            let hw = rng.uniform_range(0.1 * s, 0.3 * s);
            coverage(size, |y, x| (y - cy).abs() <= hh && (x - cx).abs() <= hw)
        }
        ShapeKind::Blob => {
            let sigma = rng.uniform_range(0.08 * s, 0.2 * s);
            let mut v = vec![0.0; size * size];
            for y in 0..size {
                for x in 0..size {
                    let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    v[y * size + x] = (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
            v
        }
    };
    shape.into_iter().map(|v| intensity * v).collect()
}

/// Kinds are assigned round-robin, so class counts differ by at most one.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<LabeledImage>> {
    if !spec.size.is_power_of_two() || spec.size < 2 {
        return Err(Error::Sizing(format!(
            "synthetic image size must be a power of two, got {}",
            spec.size
        )));
    }
    if spec.kinds.is_empty() || spec.channels == 0 {
        return Err(Error::Invalid(
            "need at least one shape kind and channel".into(),
        ));
    }
    let mut master = RngStream::new(spec.seed);
    (0..spec.count)
        .map(|i| {
            let class = i % spec.kinds.len();
            let mut rng = master.split(i as u64);
            let mut data = Vec::with_capacity(spec.size * spec.size * spec.channels);
            for _ in 0..spec.channels {
                data.extend(draw(spec.kinds[class], spec.size, &mut rng));
            }
            Ok(LabeledImage {
                image: ImageTensor::new(spec.size, spec.size, spec.channels, data)?,
                class,
            })
        })
        .collect()
}
