use crate::error::{shape_err, Result};
use crate::tensor::{OpKind, Scalar, Tape, Tensor, Var};

impl<T: Scalar> Tape<T> {
    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order, which is where the gradient is routed.
    pub fn maxpool2(&self, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, h, w) = x.value().dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("maxpool2 needs even spatial extents, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.value().data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, oh, ow], out);
        Ok(self.record(OpKind::MaxPool2, out, &[x], move |g, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for (&src, &gv) in argmax.iter().zip(g.data()) {
                gx[src] += gv;
            }
            vec![Some(Tensor::from_parts(vec![n, c, h, w], gx))]
        }))
    }
}
