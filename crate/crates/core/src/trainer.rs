//! Training objective and loop.
//!
//! Each batch element is one true Markov transition: the clean state is
//! jumped to `t − 1`, advanced by a single corruption step to `t`, and the
//! model learns to map the second back to the first. The squared error is
//! taken in noise units (see [`to_noise_units`]).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forward::{corrupt_step, corrupt_to};
use crate::io::checkpoint::{save_checkpoint, Checkpoint};
use crate::io::synth::LabeledImage;
use crate::model::{init_model, Condition, DenoiserModel, ModelHyper};
use crate::nn::{adam_update, AdamConfig};
use crate::rng::RngStream;
use crate::sampler::{calibrate_reverse_variance, ReverseVariance};
use crate::schedule::{cosine_lr, make_schedule, DiffusionSchedule, ScheduleConfig};
use crate::spectral::{decompose, SpectralState};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub base_lr: f64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub features: usize,
    pub time_dim: usize,
    /// Train class-conditional (labels from the dataset) or unconditional.
    pub conditional: bool,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            total_steps: 2000,
            base_lr: 1e-3,
            seed: 0,
            schedule: ScheduleConfig::for_steps(64),
            features: 32,
            time_dim: 32,
            conditional: true,
            checkpoint_every: 500,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::Invalid(
                "batch_size and total_steps must be at least 1".into(),
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Invalid(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        Ok(())
    }
}

/// `weight · mean((pred − target)²)` over every component, with its gradient
/// with respect to `pred`.
pub fn mse_loss(
    pred: &SpectralState,
    target: &SpectralState,
    weight: f64,
) -> Result<(f64, SpectralState)> {
    if pred.meta != target.meta || pred.t != target.t {
        return Err(Error::Shape(format!(
            "prediction {:?} at t={} vs target {:?} at t={}",
            pred.meta, pred.t, target.meta, target.t
        )));
    }
    let p = pred.to_flat();
    let q = target.to_flat();
    let n = p.len() as f64;
    let mut sum = 0.0;
    let grad: Vec<f64> = p
        .iter()
        .zip(&q)
        .map(|(a, b)| {
            let d = a - b;
            sum += d * d;
            2.0 * weight * d / n
        })
        .collect();
    let g = SpectralState::from_flat(pred.meta, pred.t, &grad)?;
    Ok((weight * sum / n, g))
}

/// Divides spectrum components by `spectrum_scale` and detail coefficients by
/// `hf_scale`, so both parts of the state weigh alike in the loss.
pub fn to_noise_units(state: &SpectralState, schedule: &DiffusionSchedule) -> SpectralState {
    let mut out = state.clone();
    let (fs, hs) = (1.0 / schedule.spectrum_scale, 1.0 / schedule.hf_scale);
    for s in &mut out.spectrum {
        s.re.iter_mut()
            .chain(s.im.iter_mut())
            .for_each(|v| *v *= fs);
    }
    for b in out.hf.iter_mut().flatten() {
        b.data.iter_mut().for_each(|v| *v *= hs);
    }
    out
}

/// Model, schedule, optimizer position and random stream of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: DenoiserModel,
    pub schedule: DiffusionSchedule,
    pub rng: RngStream,
    /// Completed optimizer steps.
    pub step: usize,
    pub image_dims: (usize, usize),
    /// Set by [`train`] once the run reaches `total_steps`; cleared by every
    /// optimizer step.
    pub reverse_variance: Option<ReverseVariance>,
    levels: usize,
    clean: Vec<SpectralState>,
    conditions: Vec<Condition>,
}

/// Training images used to measure the reverse variance.
pub const VARIANCE_EXAMPLES: usize = 64;
const VARIANCE_STREAM: u64 = 0x7661_7269_616e_6365;

/// Number of classes implied by a labelled dataset.
fn class_count(data: &[LabeledImage]) -> usize {
    data.iter().map(|e| e.class + 1).max().unwrap_or(0)
}

/// RMS of each detail band over a dataset, relative to `hf_scale`.
pub fn band_std(states: &[SpectralState], hf_scale: f64) -> Vec<f64> {
    let bands = states.first().map_or(0, |s| s.meta.bands());
    let mut pow = vec![0.0; bands];
    let mut n = vec![0usize; bands];
    for s in states {
        for ch in &s.hf {
            for (kb, band) in ch.iter().enumerate() {
                pow[kb] += band.energy();
                n[kb] += band.data.len();
            }
        }
    }
    pow.iter()
        .zip(&n)
        .map(|(p, &k)| (p / k.max(1) as f64).sqrt().max(1e-3 * hf_scale) / hf_scale)
        .collect()
}

impl Trainer {
    /// Fresh run: calibrates the noise units on the dataset and initializes
    /// the model from the configured seed.
    pub fn new(config: TrainConfig, data: &[LabeledImage], levels: usize) -> Result<Self> {
        config.validate()?;
        let (clean, conditions, dims) = prepare(&config, data, levels)?;
        let lf = (dims.0 >> levels, dims.1 >> levels);
        let mut schedule = make_schedule(&config.schedule, lf)?;
        schedule.calibrate(&clean)?;
        let mut rng = RngStream::new(config.seed);
        let mut init_rng = rng.split(0);
        let hyper = ModelHyper {
            features: config.features,
            levels,
            channels: data[0].image.channels,
            num_classes: if config.conditional {
                class_count(data)
            } else {
                0
            },
            time_dim: config.time_dim,
            schedule: config.schedule.clone(),
            spectrum_scale: schedule.spectrum_scale,
            hf_scale: schedule.hf_scale,
            band_std: band_std(&clean, schedule.hf_scale),
        };
        let mut model = init_model(hyper, &mut init_rng)?;
        model.snap_to_f32();
        Ok(Self {
            config,
            model,
            schedule,
            rng,
            step: 0,
            image_dims: dims,
            reverse_variance: None,
            levels,
            clean,
            conditions,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(config: TrainConfig, data: &[LabeledImage], ckpt: Checkpoint) -> Result<Self> {
        config.validate()?;
        let levels = ckpt.model.hyper.levels;
        let (clean, conditions, dims) = prepare(&config, data, levels)?;
        if dims != ckpt.image_dims {
            return Err(Error::Shape(format!(
                "checkpoint trained on {:?} images, dataset has {dims:?}",
                ckpt.image_dims
            )));
        }
        if ckpt.schedule.steps != config.schedule.steps {
            return Err(Error::Invalid(
                "checkpoint schedule length differs from config".into(),
            ));
        }
        Ok(Self {
            config,
            model: ckpt.model,
            schedule: ckpt.schedule,
            rng: ckpt.rng,
            step: ckpt.step as usize,
            image_dims: dims,
            reverse_variance: ckpt.reverse_variance,
            levels,
            clean,
            conditions,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            image_dims: self.image_dims,
            schedule: self.schedule.clone(),
            rng: self.rng.clone(),
            step: self.step as u64,
            reverse_variance: self.reverse_variance.clone(),
        }
    }

    /// Measures the sampling noise of the current model on up to
    /// [`VARIANCE_EXAMPLES`] evenly spaced training images. The random
    /// stream depends only on the seed, so the result does not depend on
    /// whether the run was resumed.
    pub fn calibrate_reverse_variance(&self) -> Result<ReverseVariance> {
        let stride = self.clean.len().div_ceil(VARIANCE_EXAMPLES).max(1);
        let examples: Vec<(SpectralState, Condition)> = self
            .clean
            .iter()
            .cloned()
            .zip(self.conditions.iter().copied())
            .step_by(stride)
            .collect();
        let mut rng = RngStream::new(self.config.seed).split(VARIANCE_STREAM);
        calibrate_reverse_variance(&self.model, &examples, &self.schedule, &mut rng)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Draws a batch from the dataset and takes one optimizer step.
    pub fn step_once(&mut self) -> Result<f64> {
        let n = self.clean.len();
        let batch: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.below(n))
            .collect();
        self.training_step(&batch)
    }

    /// One optimizer step on the given dataset indices. Returns the batch-mean loss.
    pub fn training_step(&mut self, batch: &[usize]) -> Result<f64> {
        self.reverse_variance = None;
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let steps = self.schedule.steps;
        let scale = 1.0 / batch.len() as f64;
        self.model.zero_grad();
        let mut total = 0.0;
        for (slot, &i) in batch.iter().enumerate() {
            let clean = self.clean.get(i).ok_or_else(|| {
                Error::Invalid(format!(
                    "batch index {i} outside dataset of {}",
                    self.clean.len()
                ))
            })?;
            let mut rng = self.rng.split(slot as u64);
            let t = 1 + rng.below(steps);
            let target = corrupt_to(clean, t - 1, &self.schedule, &mut rng)?;
            let input = corrupt_step(&target, &self.schedule, &mut rng)?;
            let (pred, cache) = self.model.forward_cached(&input, t, self.conditions[i])?;
            let (loss, grad) = mse_loss(
                &to_noise_units(&pred, &self.schedule),
                &to_noise_units(&target, &self.schedule),
                self.schedule.weight_at(t),
            )?;
            // The unit change is diagonal, so the chain rule applies it once more.
            let mut grad = to_noise_units(&grad, &self.schedule);
            grad = grad.lincomb(scale, &grad, 0.0)?;
            self.model.backward(&cache, &grad)?;
            total += loss;
        }
        self.step += 1;
        let lr = self.current_lr();
        for p in &mut self.model.params {
            adam_update(p, lr, self.step, &self.config.adam);
        }
        self.model.snap_to_f32();
        if !self.model.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                what: "model parameters".into(),
            });
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                what: "training loss".into(),
            });
        }
        Ok(loss)
    }

    /// Learning rate used by the step that was just taken (cosine in `step − 1`).
    pub fn current_lr(&self) -> f64 {
        cosine_lr(
            self.config.base_lr,
            self.step.saturating_sub(1),
            self.config.total_steps,
        )
    }
}

type Prepared = (Vec<SpectralState>, Vec<Condition>, (usize, usize));

fn prepare(config: &TrainConfig, data: &[LabeledImage], levels: usize) -> Result<Prepared> {
    let first = data
        .first()
        .ok_or_else(|| Error::Invalid("training needs a non-empty dataset".into()))?;
    let dims = (first.image.height, first.image.width);
    let mut clean = Vec::with_capacity(data.len());
    let mut conditions = Vec::with_capacity(data.len());
    for e in data {
        if (e.image.height, e.image.width, e.image.channels)
            != (dims.0, dims.1, first.image.channels)
        {
            return Err(Error::Shape("dataset images differ in size".into()));
        }
        clean.push(decompose(&e.image, levels)?);
        conditions.push(if config.conditional {
            Condition::Class(e.class)
        } else {
            Condition::Unconditional
        });
    }
    Ok((clean, conditions, dims))
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Where [`train`] writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.dir.join(format!("ckpt_{step:06}.wfd"))
    }

    pub fn final_path(&self) -> PathBuf {
        self.dir.join("final.wfd")
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("loss.log")
    }
}

/// Runs `trainer` until `config.total_steps`, appending `step lr loss` lines
/// to the loss log and writing checkpoints at the configured cadence plus a
/// final one. With no output directory nothing is written.
pub fn train(trainer: &mut Trainer, out: Option<&TrainOutput>) -> Result<Vec<LossRecord>> {
    let mut log = match out {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
            let path = o.log_path();
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(trainer.step > 0)
                .write(true)
                .truncate(trainer.step == 0)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((BufWriter::new(file), path))
        }
        None => None,
    };
    let mut records = Vec::new();
    while trainer.step < trainer.config.total_steps {
        let loss = trainer.step_once()?;
        let rec = LossRecord {
            step: trainer.step,
            lr: trainer.current_lr(),
            loss,
        };
        records.push(rec);
        if let Some((w, path)) = log.as_mut() {
            writeln!(w, "{} {:e} {:e}", rec.step, rec.lr, rec.loss)
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(o) = out {
            let every = trainer.config.checkpoint_every;
            if every > 0 && trainer.step.is_multiple_of(every) {
                flush(log.as_mut())?;
                save_checkpoint(&o.checkpoint_path(trainer.step), &trainer.checkpoint())?;
            }
        }
    }
    flush(log.as_mut())?;
    if trainer.reverse_variance.is_none() {
        trainer.reverse_variance = Some(trainer.calibrate_reverse_variance()?);
    }
    if let Some(o) = out {
        save_checkpoint(&o.final_path(), &trainer.checkpoint())?;
    }
    Ok(records)
}

fn flush(log: Option<&mut (BufWriter<File>, PathBuf)>) -> Result<()> {
    if let Some((w, path)) = log {
        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
    }
    Ok(())
}

/// Reads a loss log back into records.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Config {
                line: i + 1,
                msg: format!("malformed loss log line {line:?}"),
            };
            let mut it = line.split_whitespace();
            let step = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let lr = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let loss = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            Ok(LossRecord { step, lr, loss })
        })
        .collect()
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Window of the loss-progress measure, in steps.
pub const LOSS_WINDOW: usize = 50;

/// Smoothed loss at the end of a run divided by the mean of its first
/// `window` losses. `None` for runs shorter than the window.
pub fn loss_ratio(losses: &[f64], window: usize) -> Option<f64> {
    if window == 0 || losses.len() < window {
        return None;
    }
    let first = losses[..window].iter().sum::<f64>() / window as f64;
    let last = *smooth(losses, window).last()?;
    Some(last / first)
}
