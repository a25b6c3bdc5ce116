//! Parameter/MAC accounting, the latency benchmark and the reference table.

pub mod bench;
pub mod compare;
pub mod cost;

pub use bench::{bench_latency, BenchOptions, BenchReport};
pub use compare::{emit_comparison, Comparison, ComparisonRow, Reference, REFERENCES};
pub use cost::{closed_form_params, count_flops, count_params, layer_plan, CostReport, LayerCost, LayerKind, ParamReport};
