//! CPU latency harness: untimed warmup, then single-image forwards timed
//! with a monotonic clock.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub image_size: usize,
    pub n_images: usize,
    pub warmup: usize,
    pub threads: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { image_size: 256, n_images: 10, warmup: 5, threads: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub image_size: usize,
    pub n_images: usize,
    pub warmup_runs: usize,
    pub runs_ms: Vec<f64>,
    pub mean_ms: f64,
    pub thread_count: usize,
}

fn timed_runs(model: &Model<f32>, images: &[Tensor<f32>], warmup: usize) -> Result<Vec<f64>> {
    for i in 0..warmup {
        model.infer(&images[i % images.len()])?;
    }
    images
        .iter()
        .map(|x| {
            let start = Instant::now();
            model.infer(x)?;
            Ok(start.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

/// Times `n_images` batch-1 eval forwards of `image_size`² random images.
pub fn bench_latency(model: &Model<f32>, opts: BenchOptions) -> Result<BenchReport> {
    if opts.n_images == 0 || opts.threads == 0 {
        return Err(Error::Config("bench needs n_images ≥ 1 and threads ≥ 1".into()));
    }
    let s = opts.image_size;
    let c = model.config().in_channels;
    model.check_input(&[1, c, s, s])?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let images = (0..opts.n_images)
        .map(|_| Tensor::rand_uniform(&[1, c, s, s], 0.0, 1.0, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let runs_ms = if opts.threads == 1 {
        timed_runs(model, &images, opts.warmup)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| timed_runs(model, &images, opts.warmup))?
    };
    let mean_ms = runs_ms.iter().sum::<f64>() / runs_ms.len() as f64;
    Ok(BenchReport {
        image_size: s,
        n_images: opts.n_images,
        warmup_runs: opts.warmup,
        runs_ms,
        mean_ms,
        thread_count: opts.threads,
    })
}
