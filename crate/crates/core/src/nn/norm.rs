//! Batch normalization over `[n,c,h,w]` and layer normalization over the
//! embedding axis of `[n,tokens,e]`. Both use population variance.

use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{OpKind, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Per-channel statistics of one train-mode batch.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// `running ← (1 − momentum)·running + momentum·batch`
pub fn update_running<T: Scalar>(running: &mut Tensor<T>, batch: &[T], momentum: T) {
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = (T::one() - momentum) * *r + momentum * b;
    }
}

fn check_affine<T: Scalar>(gamma: &Var<T>, beta: &Var<T>, features: usize, what: &str) -> Result<()> {
    if gamma.shape() != [features] || beta.shape() != [features] {
        return shape_err(format!(
            "{what}: gamma {:?} / beta {:?} for {features} features",
            gamma.shape(),
            beta.shape()
        ));
    }
    Ok(())
}

/// Given normalized values `xhat` grouped into rows of `len` elements that
/// share a mean/std, returns dL/dx for the train-mode normalization.
fn normalized_input_grad<'a, T: Scalar>(dxhat: &'a [T], xhat: &'a [T], inv_std: T, len: usize) -> impl Iterator<Item = T> + 'a {
    let nf = T::from_usize_lossy(len);
    let sum_d: T = dxhat.iter().copied().sum();
    let sum_dx: T = dxhat.iter().zip(xhat).map(|(&d, &x)| d * x).sum();
    dxhat
        .iter()
        .zip(xhat)
        .map(move |(&d, &x)| inv_std / nf * (nf * d - sum_d - x * sum_dx))
}

impl<T: Scalar> Tape<T> {
    /// Returns the normalized output and, in train mode, the batch statistics
    /// the caller should fold into its running estimates.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        mode: NormMode,
        eps: T,
    ) -> Result<(Var<T>, Option<BatchStats<T>>)> {
        let (n, c, h, w) = x.value().dims4()?;
        check_affine(gamma, beta, c, "batchnorm2d")?;
        if running_mean.shape() != [c] || running_var.shape() != [c] {
            return shape_err(format!("batchnorm2d: running stats do not match {c} channels"));
        }
        let hw = h * w;
        let count = n * hw;
        if mode == NormMode::Train && count < 2 {
            return contract_err(format!("batchnorm2d in train mode needs ≥ 2 values per channel, got {count}"));
        }
        let xd = x.value().data();
        let channel = move |ch: usize| (0..n).flat_map(move |s| (s * c + ch) * hw..(s * c + ch) * hw + hw);

        let (mean, var): (Vec<T>, Vec<T>) = match mode {
            NormMode::Train => (0..c)
                .map(|ch| {
                    let nf = T::from_usize_lossy(count);
                    let m = channel(ch).map(|i| xd[i]).sum::<T>() / nf;
                    let v = channel(ch).map(|i| (xd[i] - m) * (xd[i] - m)).sum::<T>() / nf;
                    (m, v)
                })
                .unzip(),
            NormMode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        for ch in 0..c {
            for i in channel(ch) {
                xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                out[i] = gd[ch] * xhat[i] + bd[ch];
            }
        }
        let out = Tensor::from_parts(vec![n, c, h, w], out);
        let gamma_v = gamma.shared();
        let stats = (mode == NormMode::Train).then_some(BatchStats { mean, var });

        let y = self.record(OpKind::BatchNorm, out, &[x, gamma, beta], move |g, needs| {
            let g = g.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = needs[0].then(|| vec![T::zero(); g.len()]);
            for ch in 0..c {
                let idx: Vec<usize> = channel(ch).collect();
                dgamma[ch] = idx.iter().map(|&i| g[i] * xhat[i]).sum();
                dbeta[ch] = idx.iter().map(|&i| g[i]).sum();
                if let Some(dx) = dx.as_mut() {
                    let gm = gamma_v.data()[ch];
                    match mode {
                        NormMode::Train => {
                            let dxhat: Vec<T> = idx.iter().map(|&i| g[i] * gm).collect();
                            let xh: Vec<T> = idx.iter().map(|&i| xhat[i]).collect();
                            for (&i, v) in idx.iter().zip(normalized_input_grad(&dxhat, &xh, inv_std[ch], count)) {
                                dx[i] = v;
                            }
                        }
                        NormMode::Eval => {
                            for &i in &idx {
                                dx[i] = g[i] * gm * inv_std[ch];
                            }
                        }
                    }
                }
            }
            vec![
                dx.map(|v| Tensor::from_parts(vec![n, c, h, w], v)),
                Some(Tensor::from_parts(vec![c], dgamma)),
                Some(Tensor::from_parts(vec![c], dbeta)),
            ]
        });
        Ok((y, stats))
    }

    /// Normalizes each token over its embedding vector, then applies the
    /// per-feature affine `gamma`, `beta` of length `e`.
    pub fn layernorm_tokens(&self, t: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let (n, tokens, e) = t.value().dims3()?;
        check_affine(gamma, beta, e, "layernorm_tokens")?;
        let ef = T::from_usize_lossy(e);
        let td = t.value().data();
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        let rows = n * tokens;
        let mut xhat = vec![T::zero(); td.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); td.len()];
        for r in 0..rows {
            let row = &td[r * e..(r + 1) * e];
            let mean = row.iter().copied().sum::<T>() / ef;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / ef;
            inv_std[r] = T::one() / (var + eps).sqrt();
            for j in 0..e {
                let xh = (row[j] - mean) * inv_std[r];
                xhat[r * e + j] = xh;
                out[r * e + j] = gd[j] * xh + bd[j];
            }
        }
        let out = Tensor::from_parts(vec![n, tokens, e], out);
        let gamma_v = gamma.shared();
        Ok(self.record(OpKind::LayerNorm, out, &[t, gamma, beta], move |g, needs| {
            let g = g.data();
            let gm = gamma_v.data();
            let mut dgamma = vec![T::zero(); e];
            let mut dbeta = vec![T::zero(); e];
            let mut dx = needs[0].then(|| vec![T::zero(); g.len()]);
            let mut dxhat = vec![T::zero(); e];
            for r in 0..rows {
                let gr = &g[r * e..(r + 1) * e];
                let xr = &xhat[r * e..(r + 1) * e];
                for j in 0..e {
                    dgamma[j] += gr[j] * xr[j];
                    dbeta[j] += gr[j];
                    dxhat[j] = gr[j] * gm[j];
                }
                if let Some(dx) = dx.as_mut() {
                    for (d, v) in dx[r * e..(r + 1) * e].iter_mut().zip(normalized_input_grad(&dxhat, xr, inv_std[r], e)) {
                        *d = v;
                    }
                }
            }
            vec![
                dx.map(|v| Tensor::from_parts(vec![n, tokens, e], v)),
                Some(Tensor::from_parts(vec![e], dgamma)),
                Some(Tensor::from_parts(vec![e], dbeta)),
            ]
        }))
    }
}
