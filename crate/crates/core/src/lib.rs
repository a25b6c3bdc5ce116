//! UNeXt: a convolutional / tokenized-MLP encoder-decoder for binary
//! medical image segmentation, implemented from scratch for the CPU.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode tape and a finite-difference checker
//! - [`nn`]: convolutions, pooling, resampling, normalization, activations, axial shift
//! - [`arch`]: configuration, parameter layout and forward pass of the network
//! - [`train`]: loss, metrics, Adam, cosine schedule, folds and the epoch loop
//! - [`analysis`]: parameter/MAC accounting and the latency benchmark
//! - [`io`]: image ingestion, synthetic data and the checkpoint format

pub mod analysis;
pub mod arch;
pub mod error;
pub mod io;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;

pub use arch::{build_model, Model, UNeXtConfig};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
