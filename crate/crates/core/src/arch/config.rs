//! Architectural hyperparameters, canonical widths, and the ablation ladder.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which tokenized-MLP stages shift their input before the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShiftAxes {
    None,
    WidthOnly,
    HeightOnly,
    Both,
}

impl ShiftAxes {
    pub fn width(self) -> bool {
        matches!(self, ShiftAxes::WidthOnly | ShiftAxes::Both)
    }

    pub fn height(self) -> bool {
        matches!(self, ShiftAxes::HeightOnly | ShiftAxes::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DepthVariant {
    /// Three conv levels plus two tokenized-MLP levels.
    Full,
    /// Only the three conv levels of encoder and decoder.
    ConvStageOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNeXtConfig {
    /// Level widths C1..C5.
    pub channels: [usize; 5],
    /// Hidden width of both token MLPs in every tokenized block.
    pub hidden_dim: usize,
    /// Token width of the level-4 and level-5 encoder blocks. Must equal
    /// C4/C5 so the skip additions line up.
    pub token_embed_dims: [usize; 2],
    pub shift_axes: ShiftAxes,
    pub shift_partitions: usize,
    pub shift_offsets: Vec<isize>,
    /// Depthwise 3×3 conv between the two token MLPs.
    pub use_pos_embed: bool,
    pub depth_variant: DepthVariant,
    pub in_channels: usize,
    pub out_channels: usize,
    pub bn_momentum: f64,
    pub norm_eps: f64,
}

pub const DEFAULT_HIDDEN_DIM: usize = 256;

impl UNeXtConfig {
    fn with_channels(channels: [usize; 5]) -> Self {
        Self {
            channels,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            token_embed_dims: [channels[3], channels[4]],
            shift_axes: ShiftAxes::Both,
            shift_partitions: 5,
            shift_offsets: vec![-2, -1, 0, 1, 2],
            use_pos_embed: true,
            depth_variant: DepthVariant::Full,
            in_channels: 3,
            out_channels: 1,
            bn_momentum: 0.1,
            norm_eps: 1e-5,
        }
    }

    /// Standard widths (16, 32, 128, 160, 256).
    pub fn unext() -> Self {
        Self::with_channels([16, 32, 128, 160, 256])
    }

    /// Small widths (8, 16, 32, 64, 128).
    pub fn unext_s() -> Self {
        Self::with_channels([8, 16, 32, 64, 128])
    }

    /// Large widths (32, 64, 128, 256, 512).
    pub fn unext_l() -> Self {
        Self::with_channels([32, 64, 128, 256, 512])
    }

    /// Arbitrary widths with every other field at its default.
    pub fn custom(channels: [usize; 5]) -> Self {
        Self::with_channels(channels)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "unext" => Some(Self::unext()),
            "unext-s" | "unext_s" | "s" => Some(Self::unext_s()),
            "unext-l" | "unext_l" | "l" => Some(Self::unext_l()),
            _ => None,
        }
    }

    pub fn is_full(&self) -> bool {
        self.depth_variant == DepthVariant::Full
    }

    /// Spatial extents must be multiples of this.
    pub fn input_divisor(&self) -> usize {
        match self.depth_variant {
            DepthVariant::Full => 32,
            DepthVariant::ConvStageOnly => 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channels.contains(&0) {
            return bad(format!("channel widths must be positive, got {:?}", self.channels));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("in/out channels must be positive".into());
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 {
            return bad(format!("norm_eps must be > 0, got {}", self.norm_eps));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must lie in [0,1], got {}", self.bn_momentum));
        }
        if self.is_full() {
            if self.hidden_dim == 0 {
                return bad("hidden_dim must be positive".into());
            }
            if self.token_embed_dims != [self.channels[3], self.channels[4]] {
                return bad(format!(
                    "token_embed_dims {:?} must equal (C4, C5) = ({}, {}) for additive skips",
                    self.token_embed_dims, self.channels[3], self.channels[4]
                ));
            }
            if self.shift_partitions == 0 || self.shift_offsets.len() != self.shift_partitions {
                return bad(format!(
                    "{} shift offsets for {} partitions",
                    self.shift_offsets.len(),
                    self.shift_partitions
                ));
            }
        }
        Ok(())
    }

    /// `key=value` lines, the format used by config files and checkpoints.
    pub fn to_kv(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let offsets = self.shift_offsets.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        [
            format!("channels={}", join(&self.channels)),
            format!("hidden_dim={}", self.hidden_dim),
            format!("token_embed_dims={}", join(&self.token_embed_dims)),
            format!("shift_axes={}", self.shift_axes),
            format!("shift_partitions={}", self.shift_partitions),
            format!("shift_offsets={offsets}"),
            format!("use_pos_embed={}", self.use_pos_embed),
            format!("depth_variant={}", self.depth_variant),
            format!("in_channels={}", self.in_channels),
            format!("out_channels={}", self.out_channels),
            format!("bn_momentum={}", self.bn_momentum),
            format!("norm_eps={}", self.norm_eps),
        ]
        .join("\n")
            + "\n"
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are skipped;
    /// keys that are not architectural (e.g. `input_scaling`) are ignored.
    /// An optional `base=<name>` line picks the canonical config to start from.
    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(|| cfg_err(format!("not a key=value line: {l:?}"))))
            .collect::<Result<_>>()?;

        let mut cfg = match pairs.iter().find(|(k, _)| *k == "base") {
            Some((_, name)) => Self::by_name(name).ok_or_else(|| cfg_err(format!("unknown base config {name:?}")))?,
            None => Self::unext(),
        };
        let mut embed_set = false;
        for (key, value) in pairs {
            match key {
                "base" => {}
                "channels" => {
                    let v = parse_list::<usize>(key, value)?;
                    cfg.channels = v.try_into().map_err(|_| cfg_err("channels needs exactly 5 values"))?;
                }
                "hidden_dim" => cfg.hidden_dim = parse_one(key, value)?,
                "token_embed_dims" => {
                    let v = parse_list::<usize>(key, value)?;
                    cfg.token_embed_dims = v.try_into().map_err(|_| cfg_err("token_embed_dims needs exactly 2 values"))?;
                    embed_set = true;
                }
                "shift_axes" => cfg.shift_axes = value.parse()?,
                "shift_partitions" => cfg.shift_partitions = parse_one(key, value)?,
                "shift_offsets" => cfg.shift_offsets = parse_list(key, value)?,
                "use_pos_embed" => cfg.use_pos_embed = parse_one(key, value)?,
                "depth_variant" => cfg.depth_variant = value.parse()?,
                "in_channels" => cfg.in_channels = parse_one(key, value)?,
                "out_channels" => cfg.out_channels = parse_one(key, value)?,
                "bn_momentum" => cfg.bn_momentum = parse_one(key, value)?,
                "norm_eps" => cfg.norm_eps = parse_one(key, value)?,
                _ => {}
            }
        }
        if !embed_set {
            cfg.token_embed_dims = [cfg.channels[3], cfg.channels[4]];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_one<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| cfg_err(format!("bad value for {key}: {value:?}")))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value.split(',').map(|s| parse_one(key, s.trim())).collect()
}

impl fmt::Display for ShiftAxes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftAxes::None => "none",
            ShiftAxes::WidthOnly => "width",
            ShiftAxes::HeightOnly => "height",
            ShiftAxes::Both => "both",
        })
    }
}

impl FromStr for ShiftAxes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ShiftAxes::None),
            "width" | "width_only" => Ok(ShiftAxes::WidthOnly),
            "height" | "height_only" => Ok(ShiftAxes::HeightOnly),
            "both" => Ok(ShiftAxes::Both),
            _ => Err(cfg_err(format!("unknown shift_axes {s:?}"))),
        }
    }
}

impl fmt::Display for DepthVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepthVariant::Full => "full",
            DepthVariant::ConvStageOnly => "conv_stage_only",
        })
    }
}

impl FromStr for DepthVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(DepthVariant::Full),
            "conv_stage_only" => Ok(DepthVariant::ConvStageOnly),
            _ => Err(cfg_err(format!("unknown depth_variant {s:?}"))),
        }
    }
}

/// Rungs of the ablation ladder, from the bare conv stage to the complete
/// shifted tokenized-MLP network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    ConvStage,
    TokMlpNoPe,
    TokMlpPe,
    ShiftedWidth,
    ShiftedHeight,
    ShiftedBoth,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::ConvStage,
        Ablation::TokMlpNoPe,
        Ablation::TokMlpPe,
        Ablation::ShiftedWidth,
        Ablation::ShiftedHeight,
        Ablation::ShiftedBoth,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::ConvStage => "Conv Stage",
            Ablation::TokMlpNoPe => "Conv Stage + Tok-MLP w/o PE",
            Ablation::TokMlpPe => "Conv Stage + Tok-MLP + PE",
            Ablation::ShiftedWidth => "Conv Stage + Shifted Tok-MLP (W) + PE",
            Ablation::ShiftedHeight => "Conv Stage + Shifted Tok-MLP (H) + PE",
            Ablation::ShiftedBoth => "Conv Stage + Shifted Tok-MLP (H+W) + PE",
        }
    }

    /// Applies this rung to `base` (normally [`UNeXtConfig::unext`]).
    pub fn config(self, base: &UNeXtConfig) -> UNeXtConfig {
        let mut cfg = base.clone();
        cfg.depth_variant = DepthVariant::Full;
        cfg.use_pos_embed = true;
        match self {
            Ablation::ConvStage => cfg.depth_variant = DepthVariant::ConvStageOnly,
            Ablation::TokMlpNoPe => {
                cfg.use_pos_embed = false;
                cfg.shift_axes = ShiftAxes::None;
            }
            Ablation::TokMlpPe => cfg.shift_axes = ShiftAxes::None,
            Ablation::ShiftedWidth => cfg.shift_axes = ShiftAxes::WidthOnly,
            Ablation::ShiftedHeight => cfg.shift_axes = ShiftAxes::HeightOnly,
            Ablation::ShiftedBoth => cfg.shift_axes = ShiftAxes::Both,
        }
        cfg
    }
}
