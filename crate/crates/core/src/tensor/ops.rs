//! Elementwise math, reductions, matrix products and layout changes.

use super::gemm::{gemm, MatRef};
use super::{OpKind, Scalar, Tape, Tensor, Var};
use crate::error::{shape_err, Result};

fn same_shape<T: Scalar>(a: &Var<T>, b: &Var<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape(a, b, "add")?;
        let out = a.value().zip_map(b.value(), |x, y| x + y)?;
        Ok(self.record(OpKind::Add, out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape(a, b, "sub")?;
        let out = a.value().zip_map(b.value(), |x, y| x - y)?;
        Ok(self.record(OpKind::Sub, out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape(a, b, "mul")?;
        let out = a.value().zip_map(b.value(), |x, y| x * y)?;
        let (av, bv) = (a.shared(), b.shared());
        Ok(self.record(OpKind::Mul, out, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&bv, |gi, y| gi * y).expect("same shape")),
                needs[1].then(|| g.zip_map(&av, |gi, x| gi * x).expect("same shape")),
            ]
        }))
    }

    pub fn scale(&self, a: &Var<T>, s: T) -> Var<T> {
        let out = a.value().map(|x| x * s);
        self.record(OpKind::Scale, out, &[a], move |g, _| vec![Some(g.map(|v| v * s))])
    }

    pub fn neg(&self, a: &Var<T>) -> Var<T> {
        let out = a.value().map(|x| -x);
        self.record(OpKind::Neg, out, &[a], |g, _| vec![Some(g.map(|v| -v))])
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 1).
    pub fn add_channel_bias(&self, x: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let shape = x.shape();
        if shape.len() < 2 || bias.shape() != [shape[1]] {
            return shape_err(format!("bias {:?} does not broadcast over channels of {shape:?}", bias.shape()));
        }
        let (c, inner) = (shape[1], shape[2..].iter().product::<usize>());
        let mut out = x.value().clone();
        let b = bias.value().data();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let bi = b[i % c];
            chunk.iter_mut().for_each(|v| *v += bi);
        }
        Ok(self.record(OpKind::AddChannelBias, out, &[x, bias], move |g, needs| {
            let gb = needs[1].then(|| {
                let mut acc = vec![T::zero(); c];
                for (i, chunk) in g.data().chunks(inner).enumerate() {
                    acc[i % c] += chunk.iter().copied().sum::<T>();
                }
                Tensor::from_parts(vec![c], acc)
            });
            vec![Some(g.clone()), gb]
        }))
    }

    pub fn sum(&self, a: &Var<T>) -> Var<T> {
        let out = Tensor::scalar(a.value().sum());
        let shape = a.shape().to_vec();
        self.record(OpKind::Sum, out, &[a], move |g, _| {
            let n = shape.iter().product();
            vec![Some(Tensor::from_parts(shape, vec![g.data()[0]; n]))]
        })
    }

    pub fn mean(&self, a: &Var<T>) -> Var<T> {
        let n = a.value().numel();
        let inv = T::one() / T::from_usize_lossy(n);
        let out = Tensor::scalar(a.value().sum() * inv);
        let shape = a.shape().to_vec();
        self.record(OpKind::Mean, out, &[a], move |g, _| {
            vec![Some(Tensor::from_parts(shape, vec![g.data()[0] * inv; n]))]
        })
    }

    /// `[m,k]·[k,n]`, or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let (batch, m, k, n) = match (a.shape(), b.shape()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([ba, m, k], [bb, k2, n]) if k == k2 && ba == bb => (*ba, *m, *k, *n),
            (sa, sb) => return shape_err(format!("matmul: cannot multiply {sa:?} by {sb:?}")),
        };
        let batched = a.shape().len() == 3;
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (ad, bd) = (a.value().data(), b.value().data());
            for i in 0..batch {
                gemm(
                    MatRef::row_major(&ad[i * m * k..(i + 1) * m * k], m, k),
                    MatRef::row_major(&bd[i * k * n..(i + 1) * k * n], k, n),
                    T::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let shape = if batched { vec![batch, m, n] } else { vec![m, n] };
        let (av, bv) = (a.shared(), b.shared());
        let out = Tensor::from_parts(shape, out);
        Ok(self.record(OpKind::MatMul, out, &[a, b], move |g, needs| {
            let gd = g.data();
            let ga = needs[0].then(|| {
                let mut ga = vec![T::zero(); batch * m * k];
                for i in 0..batch {
                    let gv = MatRef::row_major(&gd[i * m * n..(i + 1) * m * n], m, n);
                    let bm = MatRef::row_major(&bv.data()[i * k * n..(i + 1) * k * n], k, n);
                    gemm(gv, bm.t(), T::zero(), &mut ga[i * m * k..(i + 1) * m * k]);
                }
                Tensor::from_parts(av.shape().to_vec(), ga)
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![T::zero(); batch * k * n];
                for i in 0..batch {
                    let gv = MatRef::row_major(&gd[i * m * n..(i + 1) * m * n], m, n);
                    let am = MatRef::row_major(&av.data()[i * m * k..(i + 1) * m * k], m, k);
                    gemm(am.t(), gv, T::zero(), &mut gb[i * k * n..(i + 1) * k * n]);
                }
                Tensor::from_parts(bv.shape().to_vec(), gb)
            });
            vec![ga, gb]
        }))
    }

    pub fn reshape(&self, a: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let out = a.value().clone().reshape(shape)?;
        let orig = a.shape().to_vec();
        Ok(self.record(OpKind::Reshape, out, &[a], move |g, _| {
            vec![Some(Tensor::from_parts(orig, g.data().to_vec()))]
        }))
    }

    /// `[n,c,h,w] → [n,h·w,c]`: spatial positions become tokens in row-major order.
    pub fn to_tokens(&self, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, h, w) = x.value().dims4()?;
        let out = Tensor::from_parts(vec![n, h * w, c], transpose_inner(x.value().data(), n, c, h * w));
        Ok(self.record(OpKind::ToTokens, out, &[x], move |g, _| {
            vec![Some(Tensor::from_parts(vec![n, c, h, w], transpose_inner(g.data(), n, h * w, c)))]
        }))
    }

    /// `[n,h·w,c] → [n,c,h,w]`, the inverse of [`Tape::to_tokens`].
    pub fn from_tokens(&self, t: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let (n, tokens, c) = t.value().dims3()?;
        if tokens != h * w {
            return shape_err(format!("{tokens} tokens cannot form a {h}x{w} map"));
        }
        let out = Tensor::from_parts(vec![n, c, h, w], transpose_inner(t.value().data(), n, tokens, c));
        Ok(self.record(OpKind::FromTokens, out, &[t], move |g, _| {
            vec![Some(Tensor::from_parts(vec![n, tokens, c], transpose_inner(g.data(), n, c, tokens)))]
        }))
    }
}

/// Per batch item, transposes a row-major `[rows, cols]` block.
fn transpose_inner<T: Scalar>(src: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    let block = rows * cols;
    for b in 0..batch {
        let s = &src[b * block..(b + 1) * block];
        let d = &mut dst[b * block..(b + 1) * block];
        for r in 0..rows {
            for (cidx, &v) in s[r * cols..(r + 1) * cols].iter().enumerate() {
                d[cidx * rows + r] = v;
            }
        }
    }
    dst
}
