//! Training hyperparameters, the cosine schedule and fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{contract_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub folds: usize,
    pub split_ratio: f64,
    /// Validate every this many epochs; 0 validates after the last epoch only.
    pub eval_every: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 8,
            lr_max: 1e-4,
            lr_min: 1e-5,
            seed: 0,
            folds: 3,
            split_ratio: 0.8,
            eval_every: 0,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio must lie in (0,1), got {}", self.split_ratio));
        }
        if !self.lr_max.is_finite() || self.lr_min.is_nan() || self.lr_min > self.lr_max || self.lr_min < 0.0 {
            return bad(format!("need 0 ≤ lr_min ≤ lr_max, got {} / {}", self.lr_min, self.lr_max));
        }
        if self.batch_size == 0 || self.folds == 0 {
            return bad("batch_size and folds must be positive".into());
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·epoch/epochs))`
pub fn cosine_lr(epoch: usize, plan: &TrainPlan) -> Result<f64> {
    if epoch > plan.epochs {
        return contract_err(format!("epoch {epoch} outside 0..={}", plan.epochs));
    }
    if plan.epochs == 0 {
        return Ok(plan.lr_max);
    }
    let frac = epoch as f64 / plan.epochs as f64;
    Ok(plan.lr_min + 0.5 * (plan.lr_max - plan.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// `(train, val)` index lists, one independent shuffle per fold. The train
/// side gets `floor(n · split_ratio)` samples.
pub fn split_folds(n: usize, plan: &TrainPlan) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if n < 5 {
        return contract_err(format!("need at least 5 samples to split, got {n}"));
    }
    let n_train = (n as f64 * plan.split_ratio).floor() as usize;
    Ok((0..plan.folds)
        .map(|fold| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(fold as u64);
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(&mut rng);
            let val = ids.split_off(n_train);
            (ids, val)
        })
        .collect())
}
