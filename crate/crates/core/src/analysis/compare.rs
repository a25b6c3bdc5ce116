//! Measured efficiency next to published baseline figures.

use std::fmt::Write as _;

use serde::Serialize;

use super::bench::BenchReport;
use super::cost::CostReport;

/// Published efficiency of a reference network.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Reference {
    pub name: &'static str,
    pub params_m: f64,
    pub gflops: f64,
    pub latency_ms: Option<f64>,
}

/// Baseline figures as published for 256×256 inputs (CPU latency).
pub const REFERENCES: [Reference; 7] = [
    Reference { name: "UNet", params_m: 31.13, gflops: 55.84, latency_ms: Some(223.0) },
    Reference { name: "UNet++", params_m: 9.16, gflops: 34.65, latency_ms: Some(173.0) },
    Reference { name: "ResUNet", params_m: 62.74, gflops: 94.56, latency_ms: Some(333.0) },
    Reference { name: "MedT", params_m: 1.60, gflops: 21.24, latency_ms: Some(751.0) },
    Reference { name: "TransUNet", params_m: 105.32, gflops: 38.52, latency_ms: Some(246.0) },
    Reference { name: "Swin-UNet", params_m: 41.35, gflops: 11.46, latency_ms: None },
    Reference { name: "UNeXt (published)", params_m: 1.47, gflops: 0.57, latency_ms: Some(25.0) },
];

const RATIO_BASE: &str = "TransUNet";

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub params_m: f64,
    pub gflops: f64,
    pub latency_ms: Option<f64>,
    /// TransUNet params divided by this row's params.
    pub params_reduction: f64,
    pub gflops_reduction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn measured(&self) -> &ComparisonRow {
        self.rows.last().expect("measured row is always present")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# gflops: multiply-accumulates / 1e9; reductions relative to TransUNet\n");
        s.push_str("name,params_m,gflops,latency_ms,params_reduction,gflops_reduction\n");
        for r in &self.rows {
            let lat = r.latency_ms.map(|v| format!("{v:.3}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:.4},{:.4},{},{:.2},{:.2}",
                r.name, r.params_m, r.gflops, lat, r.params_reduction, r.gflops_reduction
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| model | params (M) | GFLOPs | latency (ms) | params ÷ | GFLOPs ÷ |\n|---|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let lat = r.latency_ms.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "| {} | {:.2} | {:.2} | {} | {:.1}× | {:.1}× |",
                r.name, r.params_m, r.gflops, lat, r.params_reduction, r.gflops_reduction
            );
        }
        s
    }
}

/// Reference rows followed by one measured row built from `cost` and, when
/// available, `bench`.
pub fn emit_comparison(label: &str, cost: &CostReport, bench: Option<&BenchReport>) -> Comparison {
    let base = REFERENCES.iter().find(|r| r.name == RATIO_BASE).expect("base reference");
    let row = |name: String, params_m: f64, gflops: f64, latency_ms: Option<f64>| ComparisonRow {
        name,
        params_m,
        gflops,
        latency_ms,
        params_reduction: base.params_m / params_m,
        gflops_reduction: base.gflops / gflops,
    };
    let mut rows: Vec<ComparisonRow> =
        REFERENCES.iter().map(|r| row(r.name.to_string(), r.params_m, r.gflops, r.latency_ms)).collect();
    rows.push(row(
        format!("{label} (measured)"),
        cost.params as f64 / 1e6,
        cost.gflops_mac_convention,
        bench.map(|b| b.mean_ms),
    ));
    Comparison { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::cost::layer_plan;
    use crate::arch::UNeXtConfig;

    #[test]
    fn published_row_ratios() {
        let cost = layer_plan(&UNeXtConfig::unext(), &[1, 3, 256, 256]).unwrap();
        let cmp = emit_comparison("UNeXt", &cost, None);
        let published = cmp.rows.iter().find(|r| r.name == "UNeXt (published)").unwrap();
        assert!((published.params_reduction - 71.65).abs() < 0.01);
        assert!((published.gflops_reduction - 67.58).abs() < 0.01);
        assert!(cmp.measured().latency_ms.is_none());
        assert!(cmp.to_csv().lines().last().unwrap().ends_with(&format!("{:.2}", cmp.measured().gflops_reduction)));
    }
}
