//! Half-pixel bilinear resampling.
//!
//! Output pixel `o` samples input coordinate `(o + 0.5)·in/out − 0.5`,
//! clamped to the border. Interpolation is written in lerp form so that a
//! constant input reproduces the constant exactly.

use crate::error::{shape_err, Result};
use crate::tensor::{OpKind, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

fn axis_taps<T: Scalar>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac: T::lit(frac) }
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    /// Resizes the spatial axes of `[n,c,h,w]` to `out_h × out_w`.
    pub fn bilinear_resize(&self, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let (n, c, h, w) = x.value().dims4()?;
        if out_h == 0 || out_w == 0 {
            return shape_err("bilinear_resize: zero output extent");
        }
        let ty = axis_taps::<T>(h, out_h);
        let tx = axis_taps::<T>(w, out_w);
        let xd = x.value().data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for plane in 0..n * c {
            let p = &xd[plane * h * w..(plane + 1) * h * w];
            for y in &ty {
                let (r0, r1) = (&p[y.lo * w..(y.lo + 1) * w], &p[y.hi * w..(y.hi + 1) * w]);
                for t in &tx {
                    let top = r0[t.lo] + t.frac * (r0[t.hi] - r0[t.lo]);
                    let bottom = r1[t.lo] + t.frac * (r1[t.hi] - r1[t.lo]);
                    out.push(top + y.frac * (bottom - top));
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, out_h, out_w], out);
        Ok(self.record(OpKind::Bilinear, out, &[x], move |g, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            let gd = g.data();
            let one = T::one();
            for plane in 0..n * c {
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                let src = &gd[plane * out_h * out_w..(plane + 1) * out_h * out_w];
                for (oy, y) in ty.iter().enumerate() {
                    for (ox, t) in tx.iter().enumerate() {
                        let gv = src[oy * out_w + ox];
                        let (wy0, wy1) = (one - y.frac, y.frac);
                        let (wx0, wx1) = (one - t.frac, t.frac);
                        dst[y.lo * w + t.lo] += gv * wy0 * wx0;
                        dst[y.lo * w + t.hi] += gv * wy0 * wx1;
                        dst[y.hi * w + t.lo] += gv * wy1 * wx0;
                        dst[y.hi * w + t.hi] += gv * wy1 * wx1;
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![n, c, h, w], gx))]
        }))
    }

    /// ×2 upsampling of both spatial axes.
    pub fn bilinear_up2(&self, x: &Var<T>) -> Result<Var<T>> {
        let (_, _, h, w) = x.value().dims4()?;
        self.bilinear_resize(x, 2 * h, 2 * w)
    }
}
