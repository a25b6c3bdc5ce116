//! Neural network primitives recorded on a [`Tape`](crate::tensor::Tape).

pub mod activation;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resize;
pub mod shift;

pub use activation::{normal_cdf, stable_sigmoid, Activation};
pub use conv::ConvGeometry;
pub use norm::{update_running, BatchStats, NormMode};
pub use shift::{partition_range, ShiftAxis};
