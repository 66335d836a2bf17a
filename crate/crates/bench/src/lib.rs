//! Shared fixtures for the criterion benches.

use wfdiff_core::forward::corrupt_to;
use wfdiff_core::model::{init_model, DenoiserModel, ModelHyper};
use wfdiff_core::SpectralState;
use wfdiff_core::{decompose, DiffusionSchedule, ImageTensor, RngStream, ScheduleConfig};

pub fn random_image(size: usize, channels: usize, seed: u64) -> ImageTensor {
    let mut r = RngStream::new(seed);
    let n = size * size * channels;
    ImageTensor::new(size, size, channels, (0..n).map(|_| r.uniform()).collect()).unwrap()
}

/// A default-width model on 16×16 grayscale with a mid-chain noisy input.
pub struct ModelFixture {
    pub model: DenoiserModel,
    pub schedule: DiffusionSchedule,
    pub input: SpectralState,
    pub t: usize,
}

impl ModelFixture {
    pub fn new(features: usize) -> Self {
        let hyper = ModelHyper {
            features,
            levels: 1,
            channels: 1,
            num_classes: 3,
            time_dim: 32,
            schedule: ScheduleConfig::for_steps(64),
            spectrum_scale: 2.0,
            hf_scale: 0.3,
            band_std: vec![1.0, 1.0, 0.5],
        };
        let model = init_model(hyper, &mut RngStream::new(1)).unwrap();
        let s0 = decompose(&random_image(16, 1, 2), 1).unwrap();
        let schedule = model.hyper.diffusion_schedule(s0.meta.lf_dims()).unwrap();
        let t = 32;
        let input = corrupt_to(&s0, t, &schedule, &mut RngStream::new(3)).unwrap();
        Self {
            model,
            schedule,
            input,
            t,
        }
    }
}
