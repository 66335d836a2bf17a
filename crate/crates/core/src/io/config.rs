//! `key = value` configuration files with dotted keys and `#` comments.
//!
//! Every recognised key, its default and meaning is listed in [`KEYS`];
//! anything else is rejected. Command-line overrides use the same syntax and
//! are applied after the file.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::synth::{ShapeKind, SynthSpec};
use crate::schedule::ScheduleConfig;
use crate::trainer::TrainConfig;

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("image.size", "16", "image height and width (power of two)"),
    ("image.channels", "1", "1 = grayscale, 3 = color"),
    ("image.levels", "1", "wavelet levels (the model supports 1)"),
    ("schedule.T", "64", "number of diffusion steps"),
    (
        "schedule.beta_min",
        "auto",
        "first HF beta; auto = 1e-4 * 1000/T",
    ),
    (
        "schedule.beta_max",
        "auto",
        "last HF beta; auto = min(0.05 * 1000/T, 0.999)",
    ),
    (
        "schedule.sigma_f",
        "1.0",
        "Fourier replacement noise, in spectrum RMS units",
    ),
    (
        "schedule.mask_direction",
        "high_first",
        "high_first | low_first",
    ),
    ("schedule.hf_mode", "vp", "vp | additive"),
    ("model.features", "32", "feature width F (even, >= 4)"),
    ("model.time_dim", "32", "time embedding size (even)"),
    ("model.conditional", "true", "condition on the shape class"),
    ("train.batch_size", "16", "images per optimizer step"),
    ("train.total_steps", "2000", "optimizer steps"),
    (
        "train.base_lr",
        "0.001",
        "peak learning rate of the cosine schedule",
    ),
    (
        "train.seed",
        "0",
        "seed for initialization, batches and noise",
    ),
    (
        "train.checkpoint_every",
        "500",
        "checkpoint cadence in steps (0 = final only)",
    ),
    ("data.count", "192", "synthetic dataset size"),
    ("data.seed", "1", "synthetic dataset seed"),
    (
        "data.kinds",
        "disk,rect,blob",
        "shape kinds; the index is the class id",
    ),
    (
        "sample.stochastic",
        "true",
        "re-noise between reverse steps",
    ),
    ("spectra.nbins", "8", "radial power spectrum bins"),
];

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image_size: usize,
    pub channels: usize,
    pub levels: usize,
    pub train: TrainConfig,
    pub data: SynthSpec,
    pub stochastic: bool,
    pub nbins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            image_size: 0,
            channels: 0,
            levels: 0,
            train: TrainConfig::default(),
            data: SynthSpec::default(),
            stochastic: true,
            nbins: 0,
        };
        let raw: Vec<(String, String)> = KEYS
            .iter()
            .map(|(k, v, _)| (k.to_string(), v.to_string()))
            .collect();
        cfg.apply_all(&raw).expect("built-in defaults parse");
        cfg
    }
}

/// Parses file text into ordered `(key, value)` pairs, with line numbers in errors.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            line: i + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::Config {
                line: i + 1,
                msg: format!("bad key {k:?}"),
            });
        }
        if let Some(prev) = seen.insert(k.to_string(), i + 1) {
            return Err(Error::Config {
                line: i + 1,
                msg: format!("{k} already set on line {prev}"),
            });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parses one `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config {
        line: 0,
        msg: format!("override {s:?} is not key=value"),
    })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line: 0,
        msg: format!("{key}: cannot parse {v:?}"),
    })
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            line: 0,
            msg: format!("{key}: expected true or false, got {v:?}"),
        }),
    }
}

impl RunConfig {
    /// Defaults, then the file at `path` (if any), then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            pairs = parse_pairs(&text)?;
        }
        for o in overrides {
            pairs.push(parse_override(o)?);
        }
        let mut cfg = Self::default();
        cfg.apply_all(&pairs)?;
        Ok(cfg)
    }

    /// Applies pairs, rejecting unknown keys as a group before changing anything.
    pub fn apply_all(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let unknown: Vec<String> = pairs
            .iter()
            .filter(|(k, _)| !KEYS.iter().any(|(known, _, _)| known == k))
            .map(|(k, _)| k.clone())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownKeys(unknown));
        }
        // β defaults depend on T, so T is resolved first and β last.
        let get = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v);
        if let Some(t) = get("schedule.T") {
            let steps: usize = value("schedule.T", t)?;
            let keep = self.train.schedule.clone();
            self.train.schedule = ScheduleConfig {
                sigma_f: keep.sigma_f,
                mask_direction: keep.mask_direction,
                hf_mode: keep.hf_mode,
                ..ScheduleConfig::for_steps(steps)
            };
        }
        for (k, v) in pairs {
            self.apply(k, v)?;
        }
        for key in ["schedule.beta_min", "schedule.beta_max"] {
            if let Some(v) = get(key).filter(|v| *v != "auto") {
                let b = value(key, v)?;
                if key.ends_with("min") {
                    self.train.schedule.beta_min = b;
                } else {
                    self.train.schedule.beta_max = b;
                }
            }
        }
        self.data.size = self.image_size;
        self.data.channels = self.channels;
        Ok(())
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.train.schedule;
        match key {
            "image.size" => self.image_size = value(key, v)?,
            "image.channels" => self.channels = value(key, v)?,
            "image.levels" => self.levels = value(key, v)?,
            "schedule.T" | "schedule.beta_min" | "schedule.beta_max" => {}
            "schedule.sigma_f" => s.sigma_f = value(key, v)?,
            "schedule.mask_direction" => s.mask_direction = v.parse()?,
            "schedule.hf_mode" => s.hf_mode = v.parse()?,
            "model.features" => self.train.features = value(key, v)?,
            "model.time_dim" => self.train.time_dim = value(key, v)?,
            "model.conditional" => self.train.conditional = boolean(key, v)?,
            "train.batch_size" => self.train.batch_size = value(key, v)?,
            "train.total_steps" => self.train.total_steps = value(key, v)?,
            "train.base_lr" => self.train.base_lr = value(key, v)?,
            "train.seed" => self.train.seed = value(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = value(key, v)?,
            "data.count" => self.data.count = value(key, v)?,
            "data.seed" => self.data.seed = value(key, v)?,
            "data.kinds" => {
                self.data.kinds = v
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<Vec<ShapeKind>>>()?
            }
            "sample.stochastic" => self.stochastic = boolean(key, v)?,
            "spectra.nbins" => self.nbins = value(key, v)?,
            _ => return Err(Error::UnknownKeys(vec![key.to_string()])),
        }
        Ok(())
    }
}

/// Multi-line listing of every key with its default, for `--help`.
pub fn describe_keys() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    KEYS.iter()
        .map(|(k, d, doc)| format!("  {k:width$}  = {d:<14} {doc}"))
        .collect::<Vec<_>>()
        .join("\n")
}
