//! Dataset ingestion, synthetic data and checkpoint files.

pub mod checkpoint;
pub mod dataset;
pub mod synth;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, save_checkpoint_with, Checkpoint};
pub use dataset::{load_dataset, load_image, load_sample, save_mask_png, Dataset, Sample};
pub use synth::synth_dataset;
