//! Filled ellipses on textured noise, a small stand-in for dermoscopy data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let lo = (size / 10.0).max(2.0);
        let hi = (size / 4.0).max(lo + 1.0);
        Self {
            cy: rng.gen_range(0.2 * size..0.8 * size),
            cx: rng.gen_range(0.2 * size..0.8 * size),
            ry: rng.gen_range(lo..hi),
            rx: rng.gen_range(lo..hi),
            cos: angle.cos(),
            sin: angle.sin(),
            color: [rng.gen_range(0.55..0.9), rng.gen_range(0.3..0.6), rng.gen_range(0.2..0.5)],
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

fn sample(rng: &mut ChaCha8Rng, id: String, size: usize) -> Sample {
    let s = size as f64;
    let ellipses: Vec<Ellipse> = (0..rng.gen_range(1..=3)).map(|_| Ellipse::random(rng, s)).collect();
    let (fy, fx, phase): (f64, f64, f64) = (rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0), rng.gen_range(0.0..6.3));
    let base = [rng.gen_range(0.15..0.35), rng.gen_range(0.15..0.35), rng.gen_range(0.15..0.35)];
    let mut image = vec![0.0f32; 3 * size * size];
    let mut mask = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            // pixel centres
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let texture = 0.08 * ((fy * py / s * 6.3 + phase).sin() * (fx * px / s * 6.3).cos());
            let inside = ellipses.iter().find(|e| e.contains(py, px));
            mask[y * size + x] = inside.is_some() as u8 as f32;
            for c in 0..3 {
                let noise: f64 = rng.gen_range(-0.08..0.08);
                let v = inside.map_or(base[c], |e| e.color[c]) + texture + noise;
                image[(c * size + y) * size + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Sample {
        id,
        image: Tensor::from_vec(&[3, size, size], image).expect("sized buffer"),
        mask: Tensor::from_vec(&[1, size, size], mask).expect("sized buffer"),
    }
}

/// `n` reproducible samples; sample `i` depends only on `(seed, i)`.
pub fn synth_dataset(n: usize, img_size: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || img_size < 8 {
        return Err(Error::Config(format!("synthetic data needs n ≥ 1 and img_size ≥ 8, got {n} / {img_size}")));
    }
    let samples = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample(&mut rng, format!("synth_{i:04}"), img_size)
        })
        .collect();
    Ok(Dataset { samples })
}
