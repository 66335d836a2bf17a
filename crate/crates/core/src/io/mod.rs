//! Everything at the artifact boundary: image files, configuration,
//! checkpoints and the synthetic dataset.

pub mod checkpoint;
pub mod config;
pub mod netpbm;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use netpbm::{read_image, write_image};
pub use synth::{synth_dataset, LabeledImage, ShapeKind, SynthSpec};
