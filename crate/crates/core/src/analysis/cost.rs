//! Parameter and multiply-accumulate accounting from the configuration alone.

use std::fmt::Write as _;

use serde::Serialize;

use crate::arch::{block_name, block_order, block_widths, Direction, Model, UNeXtConfig};
use crate::error::{shape_err, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    Linear,
    BatchNorm,
    LayerNorm,
    Activation,
    MaxPool,
    Bilinear,
    Shift,
    Add,
}

/// One row of the symbolic layer plan.
#[derive(Debug, Clone, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    /// Multiply-accumulates counted towards the headline figure.
    pub macs: u64,
    /// Per-element norm/activation/pool/add work kept out of `macs`.
    pub minor_ops: u64,
    pub out_shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub input_shape: Vec<usize>,
    pub rows: Vec<LayerCost>,
    pub params: u64,
    pub macs: u64,
    /// `2 · macs`.
    pub flops: u64,
    pub minor_ops: u64,
    /// `macs / 1e9`, the convention the headline comparison uses.
    pub gflops_mac_convention: f64,
}

impl CostReport {
    fn from_rows(input_shape: Vec<usize>, rows: Vec<LayerCost>) -> Self {
        let params = rows.iter().map(|r| r.params).sum();
        let macs: u64 = rows.iter().map(|r| r.macs).sum();
        let minor_ops = rows.iter().map(|r| r.minor_ops).sum();
        Self { input_shape, rows, params, macs, flops: 2 * macs, minor_ops, gflops_mac_convention: macs as f64 / 1e9 }
    }

    /// MACs of every row of `kind`.
    pub fn macs_of(&self, kind: LayerKind) -> u64 {
        self.rows.iter().filter(|r| r.kind == kind).map(|r| r.macs).sum()
    }

    pub const CSV_HEADER: &'static str = "name,params,macs,flops2,out_shape";

    fn convention_notes(&self) -> [String; 3] {
        [
            format!("input {}", shape_str(&self.input_shape)),
            "macs: multiply-accumulates; GFLOPs reported as macs/1e9, flops2 = 2*macs".into(),
            "norm/activation/pool/add work is excluded from macs (minor bucket)".into(),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for note in self.convention_notes() {
            let _ = writeln!(s, "# {note}");
        }
        let _ = writeln!(s, "# minor ops: {}", self.minor_ops);
        let _ = writeln!(s, "{}", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.name, r.params, r.macs, 2 * r.macs, shape_str(&r.out_shape));
        }
        let _ = writeln!(s, "total,{},{},{},", self.params, self.macs, self.flops);
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        for note in self.convention_notes() {
            let _ = writeln!(s, "> {note}  ");
        }
        let _ = writeln!(s, "\n| layer | params | MACs | 2·MACs | output |");
        let _ = writeln!(s, "|---|---:|---:|---:|---|");
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {} | {} | {} | {} |", r.name, r.params, r.macs, 2 * r.macs, shape_str(&r.out_shape));
        }
        let _ = writeln!(
            s,
            "| **total** | {} ({:.3} M) | {} ({:.3} G) | {} | |",
            self.params,
            self.params as f64 / 1e6,
            self.macs,
            self.gflops_mac_convention,
            self.flops
        );
        s
    }
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn numel(shape: &[usize]) -> u64 {
    shape.iter().map(|&d| d as u64).product()
}

struct Planner {
    rows: Vec<LayerCost>,
    shape: Vec<usize>,
}

impl Planner {
    fn push(&mut self, name: String, kind: LayerKind, params: u64, macs: u64, minor_ops: u64) {
        self.rows.push(LayerCost { name, kind, params, macs, minor_ops, out_shape: self.shape.clone() });
    }

    fn elems(&self) -> u64 {
        numel(&self.shape)
    }

    fn conv(&mut self, name: String, cout: usize, k: usize, stride: usize, bias: bool) {
        let (n, cin, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let pad = k / 2;
        self.shape = vec![n, cout, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1];
        let params = (cout * cin * k * k + if bias { cout } else { 0 }) as u64;
        let macs = self.elems() * (cin * k * k) as u64;
        self.push(name, LayerKind::Conv, params, macs, 0);
    }

    fn depthwise(&mut self, name: String, k: usize) {
        let c = self.shape[1] as u64;
        let macs = self.elems() * (k * k) as u64;
        self.push(name, LayerKind::DepthwiseConv, c * (k * k) as u64 + c, macs, 0);
    }

    /// Token-wise affine map on `[n, c, h, w]` viewed as `h·w` tokens.
    fn linear(&mut self, name: String, out: usize) {
        let (n, cin, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let tokens = (n * h * w) as u64;
        self.shape[1] = out;
        self.push(name, LayerKind::Linear, (cin * out + out) as u64, tokens * (cin * out) as u64, 0);
    }

    fn norm(&mut self, name: String, kind: LayerKind) {
        let c = self.shape[1] as u64;
        let e = self.elems();
        self.push(name, kind, 2 * c, 0, e);
    }

    fn elementwise(&mut self, name: String, kind: LayerKind) {
        let e = self.elems();
        self.push(name, kind, 0, 0, e);
    }

    fn maxpool(&mut self, name: String) {
        self.shape[2] /= 2;
        self.shape[3] /= 2;
        let e = self.elems();
        self.push(name, LayerKind::MaxPool, 0, 0, 4 * e);
    }

    fn up2(&mut self, name: String) {
        self.shape[2] *= 2;
        self.shape[3] *= 2;
        let e = self.elems();
        self.push(name, LayerKind::Bilinear, 0, 4 * e, 0);
    }

    fn shift(&mut self, name: String) {
        self.push(name, LayerKind::Shift, 0, 0, 0);
    }
}

/// Symbolic traversal of the network for an input of `input_shape`. No
/// tensor math is performed.
pub fn layer_plan(cfg: &UNeXtConfig, input_shape: &[usize]) -> Result<CostReport> {
    let [_, c, h, w] = *input_shape else {
        return shape_err(format!("expected [n,c,h,w] input, got {input_shape:?}"));
    };
    if c != cfg.in_channels {
        return shape_err(format!("input has {c} channels, config expects {}", cfg.in_channels));
    }
    let d = cfg.input_divisor();
    if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
        return shape_err(format!("input extents {h}×{w} must be divisible by {d}"));
    }
    let mut pl = Planner { rows: Vec::new(), shape: input_shape.to_vec() };
    for (level, dir) in block_order(cfg) {
        let p = block_name(level, dir);
        let (_, cout) = block_widths(cfg, level, dir);
        if cfg.is_full() && level >= 4 {
            if cfg.shift_axes.width() {
                pl.shift(format!("{p}.shift_w"));
            }
            pl.conv(format!("{p}.tokenize"), cout, 3, if dir == Direction::Enc { 2 } else { 1 }, true);
            pl.linear(format!("{p}.fc1"), cfg.hidden_dim);
            if cfg.use_pos_embed {
                pl.depthwise(format!("{p}.dwconv"), 3);
            }
            pl.elementwise(format!("{p}.gelu"), LayerKind::Activation);
            if cfg.shift_axes.height() {
                pl.shift(format!("{p}.shift_h"));
            }
            pl.linear(format!("{p}.fc2"), cout);
            pl.elementwise(format!("{p}.residual"), LayerKind::Add);
            pl.norm(format!("{p}.norm"), LayerKind::LayerNorm);
            if dir == Direction::Dec {
                pl.up2(format!("{p}.up"));
            }
        } else {
            pl.conv(format!("{p}.conv"), cout, 3, 1, true);
            pl.norm(format!("{p}.bn"), LayerKind::BatchNorm);
            pl.elementwise(format!("{p}.relu"), LayerKind::Activation);
            match dir {
                Direction::Enc => pl.maxpool(format!("{p}.pool")),
                Direction::Dec => pl.up2(format!("{p}.up")),
            }
        }
        if dir == Direction::Dec && level > 1 {
            pl.elementwise(format!("{p}.skip"), LayerKind::Add);
        }
    }
    pl.conv("head".into(), cfg.out_channels, 1, 1, true);
    Ok(CostReport::from_rows(input_shape.to_vec(), pl.rows))
}

/// Learnable scalar count derived from the configuration by formula.
pub fn closed_form_params(cfg: &UNeXtConfig) -> u64 {
    let conv_block = |cin: u64, cout: u64| 9 * cin * cout + cout + 2 * cout;
    let tok_block = |cin: u64, e: u64| {
        let h = cfg.hidden_dim as u64;
        let pe = if cfg.use_pos_embed { 9 * h + h } else { 0 };
        (9 * cin * e + e) + (e * h + h) + pe + (h * e + e) + 2 * e
    };
    let [c1, c2, c3, c4, c5] = cfg.channels.map(|c| c as u64);
    let cin = cfg.in_channels as u64;
    let out = cfg.out_channels as u64;
    let conv_stage = conv_block(cin, c1) + conv_block(c1, c2) + conv_block(c2, c3)
        + conv_block(c3, c2) + conv_block(c2, c1) + conv_block(c1, c1);
    let tok_stage = if cfg.is_full() {
        tok_block(c3, c4) + tok_block(c4, c5) + tok_block(c5, c4) + tok_block(c4, c3)
    } else {
        0
    };
    conv_stage + tok_stage + c1 * out + out
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamReport {
    /// Element count of every named tensor in model order.
    pub per_tensor: Vec<(String, u64)>,
    pub total: u64,
    pub closed_form: u64,
}

impl ParamReport {
    pub fn consistent(&self) -> bool {
        self.total == self.closed_form
    }
}

pub fn count_params<T: Scalar>(model: &Model<T>) -> ParamReport {
    let per_tensor: Vec<(String, u64)> = model.params().iter().map(|(k, v)| (k.clone(), v.numel() as u64)).collect();
    let total = per_tensor.iter().map(|(_, n)| n).sum();
    ParamReport { per_tensor, total, closed_form: closed_form_params(model.config()) }
}

pub fn count_flops<T: Scalar>(model: &Model<T>, input_shape: &[usize]) -> Result<CostReport> {
    layer_plan(model.config(), input_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, Ablation, DepthVariant};

    #[test]
    fn single_conv_costs() {
        let mut pl = Planner { rows: Vec::new(), shape: vec![1, 1, 4, 4] };
        pl.conv("c".into(), 1, 3, 1, true);
        assert_eq!(pl.rows[0].params, 10);
        assert_eq!(pl.rows[0].macs, 144);
    }

    #[test]
    fn closed_form_matches_tensors_across_lattice() {
        for base in [UNeXtConfig::unext(), UNeXtConfig::unext_s(), UNeXtConfig::unext_l()] {
            for ab in Ablation::ALL {
                let cfg = ab.config(&base);
                let m = build_model::<f32>(&cfg, 0).unwrap();
                let r = count_params(&m);
                assert!(r.consistent(), "{ab:?}: {} vs {}", r.total, r.closed_form);
                let plan = layer_plan(&cfg, &[1, 3, 256, 256]).unwrap();
                assert_eq!(plan.params, r.total, "{ab:?}");
            }
        }
    }

    #[test]
    fn conv_macs_scale_quadratically() {
        let cfg = UNeXtConfig::unext();
        let a = layer_plan(&cfg, &[1, 3, 128, 128]).unwrap();
        let b = layer_plan(&cfg, &[1, 3, 256, 256]).unwrap();
        assert_eq!(b.macs_of(LayerKind::Conv), 4 * a.macs_of(LayerKind::Conv));
    }

    #[test]
    fn shift_rows_are_free() {
        let plan = layer_plan(&UNeXtConfig::unext(), &[1, 3, 256, 256]).unwrap();
        let shifts: Vec<_> = plan.rows.iter().filter(|r| r.kind == LayerKind::Shift).collect();
        assert_eq!(shifts.len(), 8);
        assert!(shifts.iter().all(|r| r.params == 0 && r.macs == 0));
    }

    #[test]
    fn bad_input_rejected() {
        let mut cfg = UNeXtConfig::unext();
        assert!(layer_plan(&cfg, &[1, 3, 100, 256]).is_err());
        cfg.depth_variant = DepthVariant::ConvStageOnly;
        assert!(layer_plan(&cfg, &[1, 3, 96, 96]).is_ok());
    }

    #[test]
    fn csv_has_header_and_total() {
        let plan = layer_plan(&UNeXtConfig::unext_s(), &[1, 3, 64, 64]).unwrap();
        let csv = plan.to_csv();
        assert!(csv.lines().any(|l| l == CostReport::CSV_HEADER));
        assert!(csv.lines().last().unwrap().starts_with("total,"));
    }
}

