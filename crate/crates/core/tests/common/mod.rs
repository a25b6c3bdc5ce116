//! Brute-force reference implementations shared by the integration tests.
//! Each is a direct loop over the definition, written without reference to
//! the library kernels.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unext::nn::ConvGeometry;
use unext::{Tape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng).unwrap()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (oc, _, kh, kw) = w.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * oc * oh * ow);
    for s in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[o];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(&[s, ci, iy as usize, ix as usize]) * w.at(&[o, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn depthwise(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: usize) -> Vec<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let k = w.shape()[2];
    let oh = h + 2 * pad - k + 1;
    let ow = wd + 2 * pad - k + 1;
    let mut out = Vec::new();
    for s in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[ch];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y + ky) as isize - pad as isize;
                            let ix = (xo + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                acc += x.at(&[s, ch, iy as usize, ix as usize]) * w.at(&[ch, 0, ky, kx]);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Half-pixel bilinear sampling with border clamping.
pub fn bilinear(x: &Tensor<f64>, oh: usize, ow: usize) -> Vec<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let coord = |o: usize, inp: usize, out: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, src - lo as f64)
    };
    let mut out = Vec::new();
    for s in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                let (y0, y1, fy) = coord(y, h, oh);
                for xo in 0..ow {
                    let (x0, x1, fx) = coord(xo, w, ow);
                    let p = |yy, xx| x.at(&[s, ch, yy, xx]);
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    out
}

pub fn layernorm(t: &Tensor<f64>, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let (n, tokens, e) = t.dims3().unwrap();
    let mut out = Vec::new();
    for s in 0..n {
        for k in 0..tokens {
            let row: Vec<f64> = (0..e).map(|j| t.at(&[s, k, j])).collect();
            let mean = row.iter().sum::<f64>() / e as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e as f64;
            for j in 0..e {
                out.push((row[j] - mean) / (var + eps).sqrt() * gamma[j] + beta[j]);
            }
        }
    }
    out
}

/// `0.5 · mean BCE + mean over samples of (1 − (2Σpy + 1)/(Σp + Σy + 1))`.
pub fn bce_dice(z: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let n = z.shape()[0];
    let per = z.numel() / n;
    let (zd, yd) = (z.data(), y.data());
    let mut bce = 0.0;
    for i in 0..zd.len() {
        let p = 1.0 / (1.0 + (-zd[i]).exp());
        bce -= yd[i] * p.ln() + (1.0 - yd[i]) * (1.0 - p).ln();
    }
    bce /= zd.len() as f64;
    let mut dice = 0.0;
    for s in 0..n {
        let (mut inter, mut sp, mut sy) = (0.0, 0.0, 0.0);
        for i in s * per..(s + 1) * per {
            let p = 1.0 / (1.0 + (-zd[i]).exp());
            inter += p * yd[i];
            sp += p;
            sy += yd[i];
        }
        dice += 1.0 - (2.0 * inter + 1.0) / (sp + sy + 1.0);
    }
    0.5 * bce + dice / n as f64
}

/// Runs `cases` randomized conv2d comparisons; returns the worst difference.
pub fn conv2d_cases(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng(seed);
        let (n, c, oc) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
        let k = [1, 3, 5][r.gen_range(0..3)];
        let (stride, pad) = (r.gen_range(1..3), r.gen_range(0..=k / 2));
        let (h, w) = (r.gen_range(k..k + 6), r.gen_range(k..k + 6));
        let x = random(&[n, c, h, w], &mut r);
        let wt = random(&[oc, c, k, k], &mut r);
        let b = random(&[oc], &mut r);
        let tape = Tape::disabled();
        let y = tape
            .conv2d(&tape.constant(x.clone()), &tape.constant(wt.clone()), Some(&tape.constant(b.clone())), ConvGeometry::new(stride, pad))
            .unwrap();
        worst = worst.max(max_diff(y.value().data(), &conv2d(&x, &wt, b.data(), stride, pad)));
    }
    worst
}

pub fn depthwise_cases(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng(1000 + seed);
        let (n, c) = (r.gen_range(1..3), r.gen_range(1..6));
        let k = [1, 3, 5][r.gen_range(0..3)];
        let pad = k / 2;
        let (h, w) = (r.gen_range(1..9), r.gen_range(1..9));
        let x = random(&[n, c, h, w], &mut r);
        let wt = random(&[c, 1, k, k], &mut r);
        let b = random(&[c], &mut r);
        let tape = Tape::disabled();
        let y = tape
            .depthwise_conv2d(&tape.constant(x.clone()), &tape.constant(wt.clone()), Some(&tape.constant(b.clone())), pad)
            .unwrap();
        worst = worst.max(max_diff(y.value().data(), &depthwise(&x, &wt, b.data(), pad)));
    }
    worst
}

pub fn bilinear_cases(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng(2000 + seed);
        let (n, c) = (r.gen_range(1..3), r.gen_range(1..4));
        let (h, w) = (r.gen_range(1..9), r.gen_range(1..9));
        let (oh, ow) = (r.gen_range(1..17), r.gen_range(1..17));
        let x = random(&[n, c, h, w], &mut r);
        let tape = Tape::disabled();
        let y = tape.bilinear_resize(&tape.constant(x.clone()), oh, ow).unwrap();
        worst = worst.max(max_diff(y.value().data(), &bilinear(&x, oh, ow)));
    }
    worst
}

pub fn layernorm_cases(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng(3000 + seed);
        let (n, tokens, e) = (r.gen_range(1..3), r.gen_range(1..10), r.gen_range(2..12));
        let t = random(&[n, tokens, e], &mut r);
        let g = random(&[e], &mut r);
        let b = random(&[e], &mut r);
        let tape = Tape::disabled();
        let y = tape
            .layernorm_tokens(&tape.constant(t.clone()), &tape.constant(g.clone()), &tape.constant(b.clone()), 1e-5)
            .unwrap();
        worst = worst.max(max_diff(y.value().data(), &layernorm(&t, g.data(), b.data(), 1e-5)));
    }
    worst
}

pub fn bce_dice_cases(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = rng(4000 + seed);
        let shape = [r.gen_range(1..4), 1, r.gen_range(1..8), r.gen_range(1..8)];
        let scale = [1.0, 4.0, 15.0][r.gen_range(0..3)];
        let z = random(&shape, &mut r).map(|v| v * scale);
        let y = random(&shape, &mut r).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let got = unext::train::bce_dice_loss(&z, &y).unwrap();
        worst = worst.max((got - bce_dice(&z, &y)).abs());
    }
    worst
}
