//! Finite-difference checks of every differentiable op, the network blocks
//! and the whole model, on randomized 64-bit inputs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{build_model, Direction, Mode, Model, UNeXtConfig};
use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, NormMode, ShiftAxis};
use crate::tensor::{grad_check, grad_check_params, grad_check_params_guarded, Tape, Tensor, Var};

pub const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;

pub const OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "add_channel_bias",
    "sum",
    "mean",
    "matmul",
    "matmul_batched",
    "reshape",
    "tokens",
    "conv2d",
    "conv2d_stride2",
    "conv2d_1x1",
    "depthwise_conv2d",
    "maxpool2",
    "bilinear_up2",
    "bilinear_resize",
    "batchnorm_train",
    "batchnorm_eval",
    "layernorm",
    "relu",
    "gelu",
    "sigmoid",
    "shift_width",
    "shift_height",
    "linear_tokens",
    "bce_dice_loss",
    "conv_block",
    "tok_mlp_block",
];

pub const FULL_MODEL: &str = "full_model";

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng).expect("positive shape")
}

/// Values bounded away from zero, for ops with a kink there.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    uniform(shape, rng).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

/// Distinct values at least 0.01 apart, so no pooling window has a near tie.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    vals.shuffle(rng);
    Tensor::from_vec(shape, vals).expect("sized")
}

/// `Σ y ⊙ R` with a fixed random `R`, so every output coordinate matters.
fn project(tape: &Tape<f64>, y: &Var<f64>) -> Result<Var<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r = tape.constant(uniform(y.shape(), &mut rng));
    let prod = tape.mul(y, &r)?;
    Ok(tape.sum(&prod))
}

/// Checks the gradient of every input of `f` in turn.
fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        let err = grad_check(
            |t, v| {
                let vars: Vec<Var<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| if i == k { v.clone() } else { Var::constant(x.clone()) })
                    .collect();
                f(t, &vars)
            },
            &inputs[k],
            EPS,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(2..6), rng.gen_range(2..6))
}

fn toy_config(channels: [usize; 5], rng: &mut ChaCha8Rng) -> UNeXtConfig {
    let mut cfg = UNeXtConfig::custom(channels);
    cfg.hidden_dim = rng.gen_range(3..6);
    cfg
}

/// Max relative gradient error of op `name` on inputs drawn from `seed`.
pub fn check_op(name: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = dims(&mut rng);
    let map = [n, c, h, w];
    match name {
        "add" | "sub" | "mul" => {
            let ins = [uniform(&map, &mut rng), uniform(&map, &mut rng)];
            check_inputs(&ins, |t, v| {
                let y = match name {
                    "add" => t.add(&v[0], &v[1])?,
                    "sub" => t.sub(&v[0], &v[1])?,
                    _ => t.mul(&v[0], &v[1])?,
                };
                project(t, &y)
            })
        }
        "scale" => {
            let s = rng.gen_range(-2.0..2.0);
            check_inputs(&[uniform(&map, &mut rng)], |t, v| project(t, &t.scale(&v[0], s)))
        }
        "neg" => check_inputs(&[uniform(&map, &mut rng)], |t, v| project(t, &t.neg(&v[0]))),
        "add_channel_bias" => {
            let ins = [uniform(&map, &mut rng), uniform(&[c], &mut rng)];
            check_inputs(&ins, |t, v| project(t, &t.add_channel_bias(&v[0], &v[1])?))
        }
        "sum" => check_inputs(&[uniform(&map, &mut rng)], |t, v| Ok(t.sum(&v[0]))),
        "mean" => check_inputs(&[uniform(&map, &mut rng)], |t, v| Ok(t.mean(&v[0]))),
        "matmul" => {
            let ins = [uniform(&[h, c], &mut rng), uniform(&[c, w], &mut rng)];
            check_inputs(&ins, |t, v| project(t, &t.matmul(&v[0], &v[1])?))
        }
        "matmul_batched" => {
            let ins = [uniform(&[n, h, c], &mut rng), uniform(&[n, c, w], &mut rng)];
            check_inputs(&ins, |t, v| project(t, &t.matmul(&v[0], &v[1])?))
        }
        "reshape" => check_inputs(&[uniform(&map, &mut rng)], |t, v| project(t, &t.reshape(&v[0], &[n * c, h * w])?)),
        "tokens" => check_inputs(&[uniform(&map, &mut rng)], |t, v| {
            let tok = t.to_tokens(&v[0])?;
            let tok = t.scale(&tok, 1.5);
            project(t, &t.from_tokens(&tok, h, w)?)
        }),
        "conv2d" | "conv2d_stride2" | "conv2d_1x1" => {
            let cout = rng.gen_range(1..4);
            let (k, geom) = match name {
                "conv2d" => (3, ConvGeometry::SAME_3X3),
                "conv2d_stride2" => (3, ConvGeometry::new(2, 1)),
                _ => (1, ConvGeometry::new(1, 0)),
            };
            let ins = [uniform(&map, &mut rng), uniform(&[cout, c, k, k], &mut rng), uniform(&[cout], &mut rng)];
            check_inputs(&ins, |t, v| project(t, &t.conv2d(&v[0], &v[1], Some(&v[2]), geom)?))
        }
        "depthwise_conv2d" => {
            let ins = [uniform(&map, &mut rng), uniform(&[c, 1, 3, 3], &mut rng), uniform(&[c], &mut rng)];
            check_inputs(&ins, |t, v| project(t, &t.depthwise_conv2d(&v[0], &v[1], Some(&v[2]), 1)?))
        }
        "maxpool2" => {
            let x = distinct(&[n, c, 2 * h, 2 * w], &mut rng);
            check_inputs(&[x], |t, v| project(t, &t.maxpool2(&v[0])?))
        }
        "bilinear_up2" => check_inputs(&[uniform(&map, &mut rng)], |t, v| project(t, &t.bilinear_up2(&v[0])?)),
        "bilinear_resize" => {
            let (oh, ow) = (rng.gen_range(1..9), rng.gen_range(1..9));
            check_inputs(&[uniform(&map, &mut rng)], |t, v| project(t, &t.bilinear_resize(&v[0], oh, ow)?))
        }
        "batchnorm_train" | "batchnorm_eval" => {
            let mode = if name == "batchnorm_train" { NormMode::Train } else { NormMode::Eval };
            let x = uniform(&[n, c, h, w], &mut rng);
            let (gamma, beta) = (uniform(&[c], &mut rng), uniform(&[c], &mut rng));
            let rm = uniform(&[c], &mut rng);
            let rv = uniform(&[c], &mut rng).map(|v| v.abs() + 0.5);
            check_inputs(&[x, gamma, beta], |t, v| {
                let (y, _) = t.batchnorm2d(&v[0], &v[1], &v[2], &rm, &rv, mode, 1e-5)?;
                project(t, &y)
            })
        }
        "layernorm" => {
            let e = rng.gen_range(2..6);
            let ins = [uniform(&[n, h * w, e], &mut rng), uniform(&[e], &mut rng), uniform(&[e], &mut rng)];
            check_inputs(&ins, |t, v| project(t, &t.layernorm_tokens(&v[0], &v[1], &v[2], 1e-5)?))
        }
        "relu" => check_inputs(&[off_kink(&map, &mut rng)], |t, v| project(t, &t.relu(&v[0]))),
        "gelu" => {
            let x = uniform(&map, &mut rng).map(|v| 2.0 * v);
            check_inputs(&[x], |t, v| project(t, &t.gelu(&v[0])))
        }
        "sigmoid" => check_inputs(&[uniform(&map, &mut rng)], |t, v| project(t, &t.sigmoid(&v[0]))),
        "shift_width" | "shift_height" => {
            let axis = if name == "shift_width" { ShiftAxis::Width } else { ShiftAxis::Height };
            let extent = if axis == ShiftAxis::Width { w } else { h } as isize;
            let parts = rng.gen_range(1..=c.max(1));
            let offsets: Vec<isize> = (0..parts).map(|_| rng.gen_range(-(extent - 1)..extent)).collect();
            check_inputs(&[uniform(&map, &mut rng)], |t, v| project(t, &t.shift_channels(&v[0], axis, parts, &offsets)?))
        }
        "linear_tokens" => {
            let (din, dout) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let ins = [uniform(&[n, h * w, din], &mut rng), uniform(&[din, dout], &mut rng), uniform(&[dout], &mut rng)];
            check_inputs(&ins, |t, v| project(t, &t.linear_tokens(&v[0], &v[1], &v[2])?))
        }
        "bce_dice_loss" => {
            let z = uniform(&[n, 1, h, w], &mut rng).map(|v| 3.0 * v);
            let y = uniform(&[n, 1, h, w], &mut rng).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            check_inputs(&[z], |t, v| t.bce_dice_loss(&v[0], &y))
        }
        "conv_block" => {
            let cfg = toy_config([2, 3, 4, 4, 4], &mut rng);
            let level = rng.gen_range(1..=3);
            let dir = if rng.gen_bool(0.5) { Direction::Enc } else { Direction::Dec };
            let cin = crate::arch::block_widths(&cfg, level, dir).0;
            let x = uniform(&[2, cin, 4, 4], &mut rng);
            check_block(&cfg, seed, x, move |p, x| p.conv_block(x, level, dir))
        }
        "tok_mlp_block" => {
            let cfg = toy_config([2, 3, 8, 8, 8], &mut rng);
            let dir = if rng.gen_bool(0.5) { Direction::Enc } else { Direction::Dec };
            let x = uniform(&[1, 8, 16, 16], &mut rng);
            check_block(&cfg, seed, x, move |p, x| p.tok_mlp_block(x, 4, dir))
        }
        FULL_MODEL => check_full_model(seed),
        other => Err(Error::Config(format!("unknown op {other:?}; known: {}", OPS.join(", ")))),
    }
}

/// Checks gradients of a block's parameters and of its input.
fn check_block<F>(cfg: &UNeXtConfig, seed: u64, x: Tensor<f64>, block: F) -> Result<f64>
where
    F: Fn(&mut crate::arch::Pass<'_, f64>, &Var<f64>) -> Result<Var<f64>>,
{
    let mut model: Model<f64> = build_model(cfg, seed)?;
    let wrt_params = grad_check_params(
        &mut model,
        |m| m.params_mut(),
        |t, m| {
            let xv = t.constant(x.clone());
            let mut pass = m.pass(t, Mode::Train);
            let y = block(&mut pass, &xv)?;
            project(t, &y)
        },
        EPS,
        Some(6),
        seed,
    )?;
    let wrt_input = grad_check(
        |t, xv| {
            let mut pass = model.pass(t, Mode::Train);
            let y = block(&mut pass, xv)?;
            project(t, &y)
        },
        &x,
        EPS,
    )?;
    Ok(wrt_params.max(wrt_input))
}

/// Whole network with default shifts on a 96×96 input, loss = BCE + Dice.
///
/// Thousands of ReLU and max-pool switches sit downstream of every
/// parameter, so some probes straddle a kink; those are skipped (see
/// [`grad_check_params_guarded`]). More than half skipped is an error.
pub fn check_full_model(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = toy_config([2, 3, 4, 4, 4], &mut rng);
    let x = Tensor::rand_uniform(&[1, 3, 96, 96], 0.0, 1.0, &mut rng)?;
    let y = Tensor::rand_uniform(&[1, 1, 96, 96], 0.0, 1.0, &mut rng)?.map(|v| if v > 0.7 { 1.0 } else { 0.0 });
    let mut model: Model<f64> = build_model(&cfg, seed)?;
    let check = grad_check_params_guarded(
        &mut model,
        |m| m.params_mut(),
        |t, m| {
            let xv = t.constant(x.clone());
            let logits = m.pass(t, Mode::Train).network(&xv)?;
            t.bce_dice_loss(&logits, &y)
        },
        EPS,
        Some(3),
        seed,
    )?;
    if 2 * check.skipped > check.probed {
        return Err(Error::Training(format!(
            "full model check: {} of {} probes hit a kink",
            check.skipped, check.probed
        )));
    }
    Ok(check.worst)
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub seeds: usize,
    pub worst: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }
}

/// Runs `name` over seeds `0..seeds` and keeps the worst error.
pub fn run_check(name: &str, seeds: usize) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        worst = worst.max(check_op(name, seed)?);
    }
    Ok(CheckOutcome { name: name.to_string(), seeds, worst })
}
