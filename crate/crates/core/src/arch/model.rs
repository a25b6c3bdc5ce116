//! Parameter layout and forward pass of the encoder-decoder.

use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::UNeXtConfig;
use crate::error::{contract_err, shape_err, Error, Result};
use crate::nn::{update_running, BatchStats, ConvGeometry, NormMode, ShiftAxis};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub type Mode = NormMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Enc,
    Dec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in ±sqrt(6 / fan_in).
    FanIn(usize),
    Zeros,
    Ones,
}

/// Name, shape and initializer of one learnable tensor.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn spec(name: String, shape: Vec<usize>, init: Init) -> ParamSpec {
    ParamSpec { name, shape, init }
}

/// Block prefix for `level` (1..=5) in direction `dir`.
pub fn block_name(level: usize, dir: Direction) -> String {
    match dir {
        Direction::Enc => format!("enc{level}"),
        Direction::Dec => format!("dec{level}"),
    }
}

/// `(in, out)` channel widths of the block at `level`.
pub fn block_widths(cfg: &UNeXtConfig, level: usize, dir: Direction) -> (usize, usize) {
    let c = &cfg.channels;
    let width = |l: usize| if l == 0 { cfg.in_channels } else { c[l - 1] };
    match dir {
        Direction::Enc => (width(level - 1), width(level)),
        // decoder level l maps C_l back down to C_{l-1}; the outermost keeps C1
        Direction::Dec => (c[level - 1], if level == 1 { c[0] } else { c[level - 2] }),
    }
}

fn is_token_level(cfg: &UNeXtConfig, level: usize) -> bool {
    cfg.is_full() && level >= 4
}

/// Levels present in the network, encoder first then decoder in data-flow order.
pub fn block_order(cfg: &UNeXtConfig) -> Vec<(usize, Direction)> {
    let depth = if cfg.is_full() { 5 } else { 3 };
    let enc = (1..=depth).map(|l| (l, Direction::Enc));
    let dec = (1..=depth).rev().map(|l| (l, Direction::Dec));
    enc.chain(dec).collect()
}

/// Every learnable tensor in deterministic order.
pub fn param_layout(cfg: &UNeXtConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for (level, dir) in block_order(cfg) {
        let p = block_name(level, dir);
        let (cin, cout) = block_widths(cfg, level, dir);
        if is_token_level(cfg, level) {
            let (e, h) = (cout, cfg.hidden_dim);
            out.push(spec(format!("{p}.tokenize.weight"), vec![e, cin, 3, 3], Init::FanIn(cin * 9)));
            out.push(spec(format!("{p}.tokenize.bias"), vec![e], Init::Zeros));
            out.push(spec(format!("{p}.fc1.weight"), vec![e, h], Init::FanIn(e)));
            out.push(spec(format!("{p}.fc1.bias"), vec![h], Init::Zeros));
            if cfg.use_pos_embed {
                out.push(spec(format!("{p}.dwconv.weight"), vec![h, 1, 3, 3], Init::FanIn(9)));
                out.push(spec(format!("{p}.dwconv.bias"), vec![h], Init::Zeros));
            }
            out.push(spec(format!("{p}.fc2.weight"), vec![h, e], Init::FanIn(h)));
            out.push(spec(format!("{p}.fc2.bias"), vec![e], Init::Zeros));
            out.push(spec(format!("{p}.norm.gamma"), vec![e], Init::Ones));
            out.push(spec(format!("{p}.norm.beta"), vec![e], Init::Zeros));
        } else {
            out.push(spec(format!("{p}.conv.weight"), vec![cout, cin, 3, 3], Init::FanIn(cin * 9)));
            out.push(spec(format!("{p}.conv.bias"), vec![cout], Init::Zeros));
            out.push(spec(format!("{p}.bn.gamma"), vec![cout], Init::Ones));
            out.push(spec(format!("{p}.bn.beta"), vec![cout], Init::Zeros));
        }
    }
    let c1 = cfg.channels[0];
    out.push(spec("head.weight".into(), vec![cfg.out_channels, c1, 1, 1], Init::FanIn(c1)));
    out.push(spec("head.bias".into(), vec![cfg.out_channels], Init::Zeros));
    out
}

/// Non-learnable state: batch-norm running mean/variance per conv block.
pub fn buffer_layout(cfg: &UNeXtConfig) -> Vec<ParamSpec> {
    block_order(cfg)
        .into_iter()
        .filter(|&(l, _)| !is_token_level(cfg, l))
        .flat_map(|(level, dir)| {
            let p = block_name(level, dir);
            let c = block_widths(cfg, level, dir).1;
            [
                spec(format!("{p}.bn.running_mean"), vec![c], Init::Zeros),
                spec(format!("{p}.bn.running_var"), vec![c], Init::Ones),
            ]
        })
        .collect()
}

fn materialize<T: Scalar>(s: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let t = match s.init {
        Init::FanIn(fan_in) => {
            let bound = (6.0 / fan_in as f64).sqrt();
            Tensor::rand_uniform(&s.shape, -bound, bound, rng)
        }
        Init::Zeros => Tensor::zeros(&s.shape),
        Init::Ones => Tensor::ones(&s.shape),
    };
    t.expect("layout shapes are positive")
}

/// A configured network: named parameters, BN buffers and the current mode.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    config: UNeXtConfig,
    params: IndexMap<String, Arc<Tensor<T>>>,
    buffers: IndexMap<String, Tensor<T>>,
    mode: Mode,
}

/// Builds a model with parameters drawn reproducibly from `seed`.
pub fn build_model<T: Scalar>(cfg: &UNeXtConfig, seed: u64) -> Result<Model<T>> {
    Model::new(cfg, seed)
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: &UNeXtConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_layout(cfg)
            .iter()
            .map(|s| (s.name.clone(), Arc::new(materialize(s, &mut rng))))
            .collect();
        let buffers = buffer_layout(cfg).iter().map(|s| (s.name.clone(), materialize(s, &mut rng))).collect();
        Ok(Self { config: cfg.clone(), params, buffers, mode: Mode::Train })
    }

    /// Reassembles a model from stored tensors, checking every name and shape
    /// against the layout implied by `cfg`.
    pub fn from_tensors(cfg: &UNeXtConfig, mut tensors: IndexMap<String, Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let mut take = |s: &ParamSpec| -> Result<Tensor<T>> {
            let t = tensors
                .shift_remove(&s.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::Checkpoint(format!("{}: stored shape {:?}, expected {:?}", s.name, t.shape(), s.shape)));
            }
            Ok(t)
        };
        let params = param_layout(cfg)
            .iter()
            .map(|s| Ok((s.name.clone(), Arc::new(take(s)?))))
            .collect::<Result<_>>()?;
        let buffers = buffer_layout(cfg).iter().map(|s| Ok((s.name.clone(), take(s)?))).collect::<Result<_>>()?;
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self { config: cfg.clone(), params, buffers, mode: Mode::Eval })
    }

    pub fn config(&self) -> &UNeXtConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &IndexMap<String, Arc<Tensor<T>>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut IndexMap<String, Arc<Tensor<T>>> {
        &mut self.params
    }

    pub fn buffers(&self) -> &IndexMap<String, Tensor<T>> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut IndexMap<String, Tensor<T>> {
        &mut self.buffers
    }

    /// Number of learnable scalars (BN running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), Arc::new(v.cast()))).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            mode: self.mode,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, c, h, w] = *shape else {
            return shape_err(format!("expected [n,c,h,w] input, got {shape:?}"));
        };
        if c != self.config.in_channels {
            return shape_err(format!("input has {c} channels, model expects {}", self.config.in_channels));
        }
        let d = self.config.input_divisor();
        if h % d != 0 || w % d != 0 {
            return shape_err(format!("input extents {h}×{w} must be divisible by {d}"));
        }
        Ok(())
    }

    /// Starts a forward pass on `tape` with batch norm in `mode`.
    pub fn pass<'a>(&'a self, tape: &'a Tape<T>, mode: Mode) -> Pass<'a, T> {
        Pass { model: self, tape, mode, stats: Vec::new() }
    }

    /// Full forward pass in the model's current mode. In train mode the BN
    /// running statistics are updated from this batch.
    pub fn forward(&mut self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let mode = self.mode;
        let (logits, stats) = {
            let mut pass = self.pass(tape, mode);
            let logits = pass.network(x)?;
            (logits, pass.stats)
        };
        self.absorb_stats(stats);
        Ok(logits)
    }

    /// Eval-mode forward without building a graph. Safe to call concurrently.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::disabled();
        let mut pass = self.pass(&tape, Mode::Eval);
        let logits = pass.network(&tape.constant(x.clone()))?;
        Ok(logits.into_tensor())
    }

    pub fn absorb_stats(&mut self, stats: Vec<(String, BatchStats<T>)>) {
        let m = T::lit(self.config.bn_momentum);
        for (prefix, s) in stats {
            if let Some(r) = self.buffers.get_mut(&format!("{prefix}.running_mean")) {
                update_running(r, &s.mean, m);
            }
            if let Some(r) = self.buffers.get_mut(&format!("{prefix}.running_var")) {
                update_running(r, &s.var, m);
            }
        }
    }
}

/// One forward traversal. Collects train-mode BN statistics so the owner can
/// fold them into its running buffers afterwards.
pub struct Pass<'a, T: Scalar> {
    model: &'a Model<T>,
    tape: &'a Tape<T>,
    mode: Mode,
    stats: Vec<(String, BatchStats<T>)>,
}

impl<'a, T: Scalar> Pass<'a, T> {
    fn p(&self, name: &str) -> Result<Var<T>> {
        let t = self
            .model
            .params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("model has no parameter {name}")))?;
        Ok(self.tape.param(name, t.clone()))
    }

    fn buffer(&self, name: &str) -> Result<&'a Tensor<T>> {
        self.model.buffers.get(name).ok_or_else(|| Error::Contract(format!("model has no buffer {name}")))
    }

    pub fn into_stats(self) -> Vec<(String, BatchStats<T>)> {
        self.stats
    }

    fn expect_channels(x: &Var<T>, c: usize, what: &str) -> Result<(usize, usize, usize, usize)> {
        let dims = x.value().dims4()?;
        if dims.1 != c {
            return shape_err(format!("{what}: input has {} channels, expected {c}", dims.1));
        }
        Ok(dims)
    }

    /// conv3×3 → BN → ReLU, then maxpool2 (enc) or bilinear ×2 (dec).
    pub fn conv_block(&mut self, x: &Var<T>, level: usize, dir: Direction) -> Result<Var<T>> {
        let cfg = &self.model.config;
        let p = block_name(level, dir);
        let (cin, _) = block_widths(cfg, level, dir);
        Self::expect_channels(x, cin, &p)?;
        let tape = self.tape;
        let y = tape.conv2d(x, &self.p(&format!("{p}.conv.weight"))?, Some(&self.p(&format!("{p}.conv.bias"))?), ConvGeometry::SAME_3X3)?;
        let (y, stats) = tape.batchnorm2d(
            &y,
            &self.p(&format!("{p}.bn.gamma"))?,
            &self.p(&format!("{p}.bn.beta"))?,
            self.buffer(&format!("{p}.bn.running_mean"))?,
            self.buffer(&format!("{p}.bn.running_var"))?,
            self.mode,
            T::lit(cfg.norm_eps),
        )?;
        if let Some(s) = stats {
            self.stats.push((format!("{p}.bn"), s));
        }
        let y = tape.relu(&y);
        match dir {
            Direction::Enc => tape.maxpool2(&y),
            Direction::Dec => tape.bilinear_up2(&y),
        }
    }

    /// 3×3 conv to the block's token width followed by flattening of the
    /// spatial grid. Returns the tokens and the grid extents.
    pub fn tokenize(&mut self, x: &Var<T>, level: usize, dir: Direction) -> Result<(Var<T>, usize, usize)> {
        let p = block_name(level, dir);
        let stride = if dir == Direction::Enc { 2 } else { 1 };
        let y = self.tape.conv2d(
            x,
            &self.p(&format!("{p}.tokenize.weight"))?,
            Some(&self.p(&format!("{p}.tokenize.bias"))?),
            ConvGeometry::new(stride, 1),
        )?;
        let (_, _, h, w) = y.value().dims4()?;
        Ok((self.tape.to_tokens(&y)?, h, w))
    }

    /// Shifted tokenized-MLP block. Encoder blocks downsample in the
    /// tokenizing conv, decoder blocks upsample after it.
    pub fn tok_mlp_block(&mut self, x: &Var<T>, level: usize, dir: Direction) -> Result<Var<T>> {
        let cfg = &self.model.config;
        if !is_token_level(cfg, level) {
            return contract_err(format!("level {level} has no tokenized block in this config"));
        }
        let p = block_name(level, dir);
        let (cin, _) = block_widths(cfg, level, dir);
        Self::expect_channels(x, cin, &p)?;
        let tape = self.tape;
        let shift = |x: &Var<T>, axis| tape.shift_channels(x, axis, cfg.shift_partitions, &cfg.shift_offsets);

        let xs = if cfg.shift_axes.width() { shift(x, ShiftAxis::Width)? } else { x.clone() };
        let (tokens, h, w) = self.tokenize(&xs, level, dir)?;
        let hidden = tape.linear_tokens(&tokens, &self.p(&format!("{p}.fc1.weight"))?, &self.p(&format!("{p}.fc1.bias"))?)?;
        let mut map = tape.from_tokens(&hidden, h, w)?;
        if cfg.use_pos_embed {
            map = tape.depthwise_conv2d(
                &map,
                &self.p(&format!("{p}.dwconv.weight"))?,
                Some(&self.p(&format!("{p}.dwconv.bias"))?),
                1,
            )?;
        }
        let map = tape.gelu(&map);
        let map = if cfg.shift_axes.height() { shift(&map, ShiftAxis::Height)? } else { map };
        let hidden = tape.to_tokens(&map)?;
        let out = tape.linear_tokens(&hidden, &self.p(&format!("{p}.fc2.weight"))?, &self.p(&format!("{p}.fc2.bias"))?)?;
        let out = tape.add(&tokens, &out)?;
        let out = tape.layernorm_tokens(
            &out,
            &self.p(&format!("{p}.norm.gamma"))?,
            &self.p(&format!("{p}.norm.beta"))?,
            T::lit(cfg.norm_eps),
        )?;
        let y = tape.from_tokens(&out, h, w)?;
        match dir {
            Direction::Enc => Ok(y),
            Direction::Dec => tape.bilinear_up2(&y),
        }
    }

    pub fn block(&mut self, x: &Var<T>, level: usize, dir: Direction) -> Result<Var<T>> {
        if is_token_level(&self.model.config, level) {
            self.tok_mlp_block(x, level, dir)
        } else {
            self.conv_block(x, level, dir)
        }
    }

    /// Input image to per-pixel logits.
    pub fn network(&mut self, x: &Var<T>) -> Result<Var<T>> {
        self.model.check_input(x.shape())?;
        let depth = if self.model.config.is_full() { 5 } else { 3 };
        let mut skips = Vec::with_capacity(depth);
        let mut y = x.clone();
        for level in 1..=depth {
            y = self.block(&y, level, Direction::Enc)?;
            skips.push(y.clone());
        }
        // the deepest encoder output feeds the decoder directly
        skips.pop();
        for level in (1..=depth).rev() {
            y = self.block(&y, level, Direction::Dec)?;
            if level > 1 {
                y = self.tape.add(&y, &skips[level - 2])?;
            }
        }
        let head = self.tape.conv2d(&y, &self.p("head.weight")?, Some(&self.p("head.bias")?), ConvGeometry::new(1, 0))?;
        Ok(head)
    }
}
