//! Network configuration and assembly.

pub mod config;
pub mod model;

pub use config::{Ablation, DepthVariant, ShiftAxes, UNeXtConfig, DEFAULT_HIDDEN_DIM};
pub use model::{block_name, block_order, block_widths, build_model, buffer_layout, param_layout, Direction, Mode, Model, ParamSpec, Pass};
