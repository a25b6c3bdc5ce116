use crate::error::{shape_err, Result};
use crate::tensor::gemm::{gemm, MatRef};
use crate::tensor::{OpKind, Scalar, Tape, Tensor, Var};

impl<T: Scalar> Tape<T> {
    /// Applies `t·weight + bias` to every token of `[n,tokens,in]`;
    /// `weight` is `[in,out]`, `bias` `[out]`.
    pub fn linear_tokens(&self, t: &Var<T>, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let (n, tokens, fin) = t.value().dims3()?;
        let (win, fout) = match *weight.shape() {
            [a, b] => (a, b),
            _ => return shape_err(format!("linear_tokens: weight must be [in,out], got {:?}", weight.shape())),
        };
        if win != fin || bias.shape() != [fout] {
            return shape_err(format!(
                "linear_tokens: tokens of width {fin} vs weight {:?} and bias {:?}",
                weight.shape(),
                bias.shape()
            ));
        }
        let rows = n * tokens;
        let mut out = Vec::with_capacity(rows * fout);
        for _ in 0..rows {
            out.extend_from_slice(bias.value().data());
        }
        let (tv, wv) = (t.shared(), weight.shared());
        gemm(MatRef::row_major(tv.data(), rows, fin), MatRef::row_major(wv.data(), fin, fout), T::one(), &mut out);
        let out = Tensor::from_parts(vec![n, tokens, fout], out);
        Ok(self.record(OpKind::Linear, out, &[t, weight, bias], move |g, needs| {
            let gm = MatRef::row_major(g.data(), rows, fout);
            let gt = needs[0].then(|| {
                let mut d = vec![T::zero(); rows * fin];
                gemm(gm, MatRef::row_major(wv.data(), fin, fout).t(), T::zero(), &mut d);
                Tensor::from_parts(vec![n, tokens, fin], d)
            });
            let gw = needs[1].then(|| {
                let mut d = vec![T::zero(); fin * fout];
                gemm(MatRef::row_major(tv.data(), rows, fin).t(), gm, T::zero(), &mut d);
                Tensor::from_parts(vec![fin, fout], d)
            });
            let gb = needs[2].then(|| {
                let mut d = vec![T::zero(); fout];
                for row in g.data().chunks(fout) {
                    d.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                Tensor::from_parts(vec![fout], d)
            });
            vec![gt, gw, gb]
        }))
    }
}
