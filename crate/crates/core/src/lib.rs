//! Hybrid wavelet/Fourier diffusion at desk scale.
//!
//! Images are decomposed into a Haar low band, taken to the Fourier domain,
//! plus wavelet detail planes ([`spectral`]). A forward chain progressively
//! replaces Fourier bins with noise while noising the detail planes
//! ([`forward`]), and a small conditional convolutional network learns to
//! undo one step at a time ([`model`], [`trainer`], [`sampler`]).

pub mod error;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use schedule::{cosine_lr, make_schedule, DiffusionSchedule, ScheduleConfig};
pub use spectral::{decompose, reconstruct, ImageTensor, SpectralState, StateMeta};
