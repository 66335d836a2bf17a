//! Binary checkpoint format, little-endian throughout.
//!
//! ```text
//! "WFD1"  version:u32
//! hyper:    features levels channels num_classes time_dim steps height width : u32
//!           spectrum_scale hf_scale beta_min beta_max sigma_f : f64
//!           band_std[3·levels] : f64
//! schedule: steps:u32 mask_direction:u8 hf_mode:u8 r_max spectrum_scale hf_scale : f64
//!           radius[T+1] beta[T] alpha_bar[T+1] sigma_f[T] weight[T] : f64
//! rng:      seed:u64 word_pos:2×u64 (low, high) step:u64
//! tensors:  count:u32, then per tensor
//!           name_len:u32 name rank:u32 dims:rank×u32 values:f32…
//! variance: present:u8, then if 1: spectrum[T] : f64, and per step and
//!           detail band the band's error power spectrum : f64
//! ```
//!
//! Every parameter tensor is followed by its Adam moments under the names
//! `<name>@m` and `<name>@v`. Tensor values are 32-bit, so a model whose
//! values were snapped to the f32 grid round-trips exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DenoiserModel, ModelHyper};
use crate::nn::ParamTensor;
use crate::rng::RngStream;
use crate::sampler::ReverseVariance;
use crate::schedule::{DiffusionSchedule, HfMode, MaskDirection, ScheduleConfig};

pub const MAGIC: &[u8; 4] = b"WFD1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    /// Image height and width the model was trained on.
    pub image_dims: (usize, usize),
    pub schedule: DiffusionSchedule,
    pub rng: RngStream,
    /// Completed optimizer steps.
    pub step: u64,
    /// Sampling noise measured at the end of training; absent in
    /// intermediate checkpoints.
    pub reverse_variance: Option<ReverseVariance>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v =
            u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn tensor(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        self.u32(name.len())?;
        self.0.extend_from_slice(name.as_bytes());
        self.u32(shape.len())?;
        for &d in shape {
            self.u32(d)?;
        }
        for &v in values {
            self.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = self.u32()?;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let raw = self.take(n.saturating_mul(4))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok((name, shape, values))
    }
}

fn mask_code(m: MaskDirection) -> u8 {
    match m {
        MaskDirection::LowFirst => 0,
        MaskDirection::HighFirst => 1,
    }
}

fn hf_code(m: HfMode) -> u8 {
    match m {
        HfMode::VariancePreserving => 0,
        HfMode::Additive => 1,
    }
}

/// Coefficients per detail plane, in pyramid order.
fn band_sizes((height, width): (usize, usize), levels: usize) -> Vec<usize> {
    (1..=levels)
        .flat_map(|l| [(height >> l) * (width >> l); 3])
        .collect()
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize)?;

    let h = &ckpt.model.hyper;
    for v in [
        h.features,
        h.levels,
        h.channels,
        h.num_classes,
        h.time_dim,
        h.schedule.steps,
        ckpt.image_dims.0,
        ckpt.image_dims.1,
    ] {
        w.u32(v)?;
    }
    for v in [
        h.spectrum_scale,
        h.hf_scale,
        h.schedule.beta_min,
        h.schedule.beta_max,
        h.schedule.sigma_f,
    ] {
        w.f64(v);
    }
    if h.band_std.len() != 3 * h.levels {
        return Err(Error::Checkpoint(
            "band_std length does not match levels".into(),
        ));
    }
    w.f64s(&h.band_std);

    let s = &ckpt.schedule;
    w.u32(s.steps)?;
    w.u8(mask_code(s.mask_direction));
    w.u8(hf_code(s.hf_mode));
    w.f64(s.r_max);
    w.f64(s.spectrum_scale);
    w.f64(s.hf_scale);
    for arr in [&s.radius, &s.beta, &s.alpha_bar, &s.sigma_f, &s.weight] {
        w.f64s(arr);
    }

    w.u64(ckpt.rng.seed());
    let pos = ckpt.rng.word_pos();
    w.u64(pos as u64);
    w.u64((pos >> 64) as u64);
    w.u64(ckpt.step);

    w.u32(ckpt.model.params.len() * 3)?;
    for p in &ckpt.model.params {
        w.tensor(&p.name, &p.shape, &p.values)?;
        w.tensor(&format!("{}@m", p.name), &p.shape, &p.m)?;
        w.tensor(&format!("{}@v", p.name), &p.shape, &p.v)?;
    }

    match &ckpt.reverse_variance {
        None => w.u8(0),
        Some(rv) => {
            let sizes = band_sizes(ckpt.image_dims, h.levels);
            if rv.spectrum.len() != s.steps
                || rv.hf.len() != s.steps
                || rv
                    .hf
                    .iter()
                    .any(|b| b.iter().map(Vec::len).ne(sizes.iter().copied()))
            {
                return Err(Error::Checkpoint(
                    "reverse variance does not match the schedule".into(),
                ));
            }
            w.u8(1);
            w.f64s(&rv.spectrum);
            rv.hf.iter().flatten().for_each(|p| w.f64s(p));
        }
    }
    Ok(w.0)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a WFD1 checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }

    let mut fields = [0usize; 8];
    for f in fields.iter_mut() {
        *f = r.u32()?;
    }
    let mut scalars = [0.0; 5];
    for v in scalars.iter_mut() {
        *v = r.f64()?;
    }
    let image_dims = (fields[6], fields[7]);
    let band_std = r.f64s(3 * fields[1])?;

    let steps = r.u32()?;
    let mask_direction = match r.u8()? {
        0 => MaskDirection::LowFirst,
        1 => MaskDirection::HighFirst,
        c => {
            return Err(Error::Checkpoint(format!(
                "unknown mask direction code {c}"
            )))
        }
    };
    let hf_mode = match r.u8()? {
        0 => HfMode::VariancePreserving,
        1 => HfMode::Additive,
        c => return Err(Error::Checkpoint(format!("unknown hf mode code {c}"))),
    };
    let r_max = r.f64()?;
    let spectrum_scale = r.f64()?;
    let hf_scale = r.f64()?;
    let schedule = DiffusionSchedule {
        steps,
        mask_direction,
        hf_mode,
        r_max,
        spectrum_scale,
        hf_scale,
        radius: r.f64s(steps + 1)?,
        beta: r.f64s(steps)?,
        alpha_bar: r.f64s(steps + 1)?,
        sigma_f: r.f64s(steps)?,
        weight: r.f64s(steps)?,
    };

    let hyper = ModelHyper {
        features: fields[0],
        levels: fields[1],
        channels: fields[2],
        num_classes: fields[3],
        time_dim: fields[4],
        schedule: ScheduleConfig {
            steps: fields[5],
            beta_min: scalars[2],
            beta_max: scalars[3],
            sigma_f: scalars[4],
            mask_direction,
            hf_mode,
        },
        spectrum_scale: scalars[0],
        hf_scale: scalars[1],
        band_std,
    };

    let seed = r.u64()?;
    let (low, high) = (r.u64()?, r.u64()?);
    let rng = RngStream::from_position(seed, u128::from(low) | u128::from(high) << 64);
    let step = r.u64()?;

    let count = r.u32()?;
    if count % 3 != 0 {
        return Err(Error::Checkpoint(format!(
            "tensor count {count} is not a multiple of three"
        )));
    }
    let mut params = Vec::with_capacity(count / 3);
    for _ in 0..count / 3 {
        let (name, shape, values) = r.tensor()?;
        let mut p = ParamTensor::new(name, shape, values)?;
        for (suffix, slot) in [("@m", 0), ("@v", 1)] {
            let (n, sh, vals) = r.tensor()?;
            if n != format!("{}{suffix}", p.name) || sh != p.shape {
                return Err(Error::Checkpoint(format!(
                    "expected moment {}{suffix}, found {n}",
                    p.name
                )));
            }
            if slot == 0 {
                p.m = vals;
            } else {
                p.v = vals;
            }
        }
        params.push(p);
    }
    let reverse_variance = match r.u8()? {
        0 => None,
        1 => {
            let spectrum = r.f64s(steps)?;
            let sizes = band_sizes(image_dims, hyper.levels);
            let hf = (0..steps)
                .map(|_| sizes.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            Some(ReverseVariance { spectrum, hf })
        }
        c => return Err(Error::Checkpoint(format!("bad reverse variance flag {c}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    if hyper.steps() != schedule.steps {
        return Err(Error::Checkpoint("model and schedule disagree on T".into()));
    }
    let model = DenoiserModel::from_tensors(hyper, params)?;
    Ok(Checkpoint {
        model,
        image_dims,
        schedule,
        rng,
        step,
        reverse_variance,
    })
}

/// Writes through a temporary file and a rename, so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
