//! `0.5 · BCE + Dice` on logits, fused so large logits never overflow.

use crate::error::{contract_err, shape_err, Result};
use crate::nn::stable_sigmoid;
use crate::tensor::{OpKind, Scalar, Tape, Tensor, Var};

pub const BCE_WEIGHT: f64 = 0.5;
pub const DICE_SMOOTH: f64 = 1.0;

/// `max(z,0) − z·y + ln(1 + e^{−|z|})`
pub fn bce_with_logits<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

fn check_target<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<usize> {
    if logits.shape() != target.shape() {
        return shape_err(format!("loss: logits {:?} vs target {:?}", logits.shape(), target.shape()));
    }
    if logits.rank() < 2 {
        return shape_err(format!("loss: expected a leading batch axis, got {:?}", logits.shape()));
    }
    if let Some(v) = target.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return contract_err(format!("loss: target value {v} is not 0 or 1"));
    }
    Ok(logits.shape()[0])
}

impl<T: Scalar> Tape<T> {
    /// Mean pixel BCE weighted by one half plus the smoothed soft Dice term,
    /// the latter computed per sample and averaged over the batch.
    pub fn bce_dice_loss(&self, logits: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
        let n = check_target(logits.value(), target)?;
        let z = logits.value().data();
        let y = target.data();
        let total = z.len();
        let per = total / n;
        let p: Vec<T> = z.iter().map(|&v| stable_sigmoid(v)).collect();

        let bce = z.iter().zip(y).map(|(&zi, &yi)| bce_with_logits(zi, yi)).sum::<T>() / T::from_usize_lossy(total);
        let s = T::lit(DICE_SMOOTH);
        // per sample: (intersection, P + Y + s)
        let parts: Vec<(T, T)> = p
            .chunks(per)
            .zip(y.chunks(per))
            .map(|(ps, ys)| {
                let inter = ps.iter().zip(ys).map(|(&a, &b)| a * b).sum::<T>();
                let denom = ps.iter().copied().sum::<T>() + ys.iter().copied().sum::<T>() + s;
                (inter, denom)
            })
            .collect();
        let nf = T::from_usize_lossy(n);
        let two = T::lit(2.0);
        let dice = parts.iter().map(|&(i, d)| T::one() - (two * i + s) / d).sum::<T>() / nf;
        let w = T::lit(BCE_WEIGHT);
        let loss = Tensor::scalar(w * bce + dice);

        let y = target.clone();
        Ok(self.record(OpKind::BceDice, loss, &[logits], move |g, _| {
            let g = g.data()[0];
            let yd = y.data();
            let tf = T::from_usize_lossy(total);
            let grad: Vec<T> = p
                .iter()
                .zip(yd)
                .enumerate()
                .map(|(j, (&pj, &yj))| {
                    let (inter, denom) = parts[j / per];
                    let d_bce = w * (pj - yj) / tf;
                    let d_dice_dp = -(two * yj * denom - (two * inter + s)) / (denom * denom * nf);
                    g * (d_bce + d_dice_dp * pj * (T::one() - pj))
                })
                .collect();
            vec![Some(Tensor::from_parts(y.shape().to_vec(), grad))]
        }))
    }
}

/// Loss value without a graph.
pub fn bce_dice_loss<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    let tape = Tape::disabled();
    tape.bce_dice_loss(&tape.constant(logits.clone()), target)?.value().item()
}
