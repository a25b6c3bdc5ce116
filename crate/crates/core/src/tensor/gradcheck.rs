//! Central finite-difference verification of tape gradients (64-bit).

use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn eval_scalar(loss: Result<Var<f64>>) -> Result<f64> {
    loss?.value().item()
}

/// Max over coordinates of `|analytic − central difference| / max(1, |analytic|)`
/// for a scalar-valued `f` at `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, &Var<f64>) -> Result<Var<f64>>,
{
    let tape = Tape::new();
    let xv = tape.param("x", Arc::new(x.clone()));
    let loss = f(&tape, &xv)?;
    let grads = tape.backward(&loss)?;
    let analytic = grads.get("x").cloned().unwrap_or_else(|| x.zeros_like());

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = {
            let t = Tape::disabled();
            eval_scalar(f(&t, &t.constant(probe.clone())))?
        };
        probe.data_mut()[i] = orig - eps;
        let minus = {
            let t = Tape::disabled();
            eval_scalar(f(&t, &t.constant(probe.clone())))?
        };
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Gradient check over named parameters held by `model`.
///
/// `store` exposes the parameter map that `f` reads on every evaluation.
/// With `per_param = Some(k)` at most `k` coordinates (seeded sample) are
/// probed in each tensor; `None` probes all of them.
pub fn grad_check_params<M, S, F>(
    model: &mut M,
    store: S,
    f: F,
    eps: f64,
    per_param: Option<usize>,
    seed: u64,
) -> Result<f64>
where
    S: Fn(&mut M) -> &mut IndexMap<String, Arc<Tensor<f64>>>,
    F: FnMut(&Tape<f64>, &mut M) -> Result<Var<f64>>,
{
    Ok(probe_params(model, store, f, eps, per_param, seed, false)?.worst)
}

/// Result of [`grad_check_params_guarded`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardedCheck {
    pub worst: f64,
    pub probed: usize,
    /// Coordinates left out because a ReLU or max-pool switch fell inside
    /// the probe window.
    pub skipped: usize,
}

/// Relative gap between the `eps` and `eps/10` central differences above
/// which a coordinate is taken to straddle a kink.
pub const KINK_GAP: f64 = 1e-6;

/// Like [`grad_check_params`], for piecewise-smooth functions. Each
/// coordinate is differenced at `eps` and `eps/10`; when the two disagree
/// the function is not differentiable inside the window and the coordinate
/// is skipped. Otherwise the analytic gradient is compared with the `eps`
/// estimate as usual.
pub fn grad_check_params_guarded<M, S, F>(
    model: &mut M,
    store: S,
    f: F,
    eps: f64,
    per_param: Option<usize>,
    seed: u64,
) -> Result<GuardedCheck>
where
    S: Fn(&mut M) -> &mut IndexMap<String, Arc<Tensor<f64>>>,
    F: FnMut(&Tape<f64>, &mut M) -> Result<Var<f64>>,
{
    probe_params(model, store, f, eps, per_param, seed, true)
}

fn probe_params<M, S, F>(
    model: &mut M,
    store: S,
    mut f: F,
    eps: f64,
    per_param: Option<usize>,
    seed: u64,
    guard: bool,
) -> Result<GuardedCheck>
where
    S: Fn(&mut M) -> &mut IndexMap<String, Arc<Tensor<f64>>>,
    F: FnMut(&Tape<f64>, &mut M) -> Result<Var<f64>>,
{
    let tape = Tape::new();
    let loss = f(&tape, model)?;
    let grads = tape.backward(&loss)?;

    let names: Vec<String> = store(model).keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GuardedCheck { worst: 0.0, probed: 0, skipped: 0 };
    for name in names {
        let numel = store(model)[&name].numel();
        let coords: Vec<usize> = match per_param {
            Some(k) if k < numel => sample(&mut rng, numel, k).into_vec(),
            _ => (0..numel).collect(),
        };
        for i in coords {
            let analytic = grads.get(&name).map_or(0.0, |g| g.data()[i]);
            let mut eval_at = |delta: f64| -> Result<f64> {
                let slot = store(model)
                    .get_mut(&name)
                    .ok_or_else(|| Error::Contract(format!("parameter {name} disappeared")))?;
                let t = Arc::make_mut(slot);
                let orig = t.data()[i];
                t.data_mut()[i] = orig + delta;
                let tape = Tape::disabled();
                let out = eval_scalar(f(&tape, model));
                Arc::make_mut(store(model).get_mut(&name).expect("present")).data_mut()[i] = orig;
                out
            };
            let mut central = |h: f64| -> Result<f64> { Ok((eval_at(h)? - eval_at(-h)?) / (2.0 * h)) };
            let numeric = central(eps)?;
            out.probed += 1;
            if guard {
                let fine = central(eps / 10.0)?;
                if (numeric - fine).abs() > KINK_GAP * numeric.abs().max(1.0) {
                    out.skipped += 1;
                    continue;
                }
            }
            out.worst = out.worst.max(rel_err(analytic, numeric));
        }
    }
    Ok(out)
}
