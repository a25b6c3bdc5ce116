//! Dense and depthwise 2-D convolution.
//!
//! Dense convolution is lowered to a patch matrix (im2col) and a GEMM per
//! sample; the backward pass recomputes the patch matrix rather than keeping
//! it alive on the tape.

use crate::error::{shape_err, Result};
use crate::tensor::gemm::{gemm, MatRef};
use crate::tensor::{OpKind, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const SAME_3X3: ConvGeometry = ConvGeometry { stride: 1, padding: 1 };

    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= kernel && self.stride > 0).then(|| (padded - kernel) / self.stride + 1)
    }
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn im2col<T: Scalar>(x: &[T], d: &Dims, cols: &mut [T]) {
    let ohw = d.oh * d.ow;
    for ci in 0..d.c {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    let out_row = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        *o = if ix < 0 || ix >= d.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &Dims, dx: &mut [T]) {
    let ohw = d.oh * d.ow;
    for ci in 0..d.c {
        let plane = &mut dx[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (ci * d.kh + ki) * d.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Zero-padded 2-D convolution. `weight` is `[out, in, kh, kw]`, `bias` `[out]`.
    pub fn conv2d(&self, x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>, geom: ConvGeometry) -> Result<Var<T>> {
        let (n, c, h, w) = x.value().dims4()?;
        let (oc, ic, kh, kw) = weight.value().dims4()?;
        if ic != c {
            return shape_err(format!("conv2d: input has {c} channels, weight expects {ic}"));
        }
        if let Some(b) = bias {
            if b.shape() != [oc] {
                return shape_err(format!("conv2d: bias {:?} for {oc} output channels", b.shape()));
            }
        }
        let (Some(oh), Some(ow)) = (geom.out_extent(h, kh), geom.out_extent(w, kw)) else {
            return shape_err(format!("conv2d: {kh}x{kw} kernel does not fit a {h}x{w} input"));
        };
        let d = Dims { c, h, w, kh, kw, oh, ow, stride: geom.stride, pad: geom.padding };
        let (ckk, ohw) = (c * kh * kw, oh * ow);

        let xv = x.shared();
        let wv = weight.shared();
        let mut out = vec![T::zero(); n * oc * ohw];
        let mut cols = vec![T::zero(); ckk * ohw];
        for s in 0..n {
            im2col(&xv.data()[s * c * h * w..(s + 1) * c * h * w], &d, &mut cols);
            let dst = &mut out[s * oc * ohw..(s + 1) * oc * ohw];
            gemm(MatRef::row_major(wv.data(), oc, ckk), MatRef::row_major(&cols, ckk, ohw), T::zero(), dst);
            if let Some(b) = bias {
                for (o, &bo) in b.value().data().iter().enumerate() {
                    dst[o * ohw..(o + 1) * ohw].iter_mut().for_each(|v| *v += bo);
                }
            }
        }
        let out = Tensor::from_parts(vec![n, oc, oh, ow], out);

        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record(OpKind::Conv2d, out, &inputs, move |g, needs| {
            let gd = g.data();
            let mut gx = needs[0].then(|| vec![T::zero(); n * c * h * w]);
            let mut gw = needs[1].then(|| vec![T::zero(); oc * ckk]);
            let mut cols = vec![T::zero(); ckk * ohw];
            for s in 0..n {
                let gs = MatRef::row_major(&gd[s * oc * ohw..(s + 1) * oc * ohw], oc, ohw);
                if let Some(gw) = gw.as_mut() {
                    im2col(&xv.data()[s * c * h * w..(s + 1) * c * h * w], &d, &mut cols);
                    gemm(gs, MatRef::row_major(&cols, ckk, ohw).t(), T::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(MatRef::row_major(wv.data(), oc, ckk).t(), gs, T::zero(), &mut cols);
                    col2im(&cols, &d, &mut gx[s * c * h * w..(s + 1) * c * h * w]);
                }
            }
            let mut grads = vec![
                gx.map(|v| Tensor::from_parts(vec![n, c, h, w], v)),
                gw.map(|v| Tensor::from_parts(vec![oc, c, kh, kw], v)),
            ];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| channel_sums(gd, n, oc, ohw)));
            }
            grads
        }))
    }

    /// Per-channel convolution: `weight` is `[c, 1, k, k]`, stride 1, and
    /// `padding` chosen by the caller (`k / 2` preserves resolution).
    pub fn depthwise_conv2d(&self, x: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>, padding: usize) -> Result<Var<T>> {
        let (n, c, h, w) = x.value().dims4()?;
        let (wc, one, kh, kw) = weight.value().dims4()?;
        if wc != c || one != 1 {
            return shape_err(format!(
                "depthwise_conv2d: weight {:?} is not depthwise for {c} channels (expected [{c},1,k,k])",
                weight.shape()
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [c] {
                return shape_err(format!("depthwise_conv2d: bias {:?} for {c} channels", b.shape()));
            }
        }
        let geom = ConvGeometry::new(1, padding);
        let (Some(oh), Some(ow)) = (geom.out_extent(h, kh), geom.out_extent(w, kw)) else {
            return shape_err(format!("depthwise_conv2d: {kh}x{kw} kernel does not fit a {h}x{w} input"));
        };
        let xv = x.shared();
        let wv = weight.shared();
        let pad = padding as isize;

        let dd = DwDims { n, c, h, w, kh, kw, oh, ow, pad };

        let mut out = vec![T::zero(); n * c * oh * ow];
        {
            let (xd, wd) = (xv.data(), wv.data());
            dw_taps(&dd, |o, i, k| out[o] += xd[i] * wd[k]);
        }
        if let Some(b) = bias {
            let bd = b.value().data();
            for (idx, chunk) in out.chunks_mut(oh * ow).enumerate() {
                let bc = bd[idx % c];
                chunk.iter_mut().for_each(|v| *v += bc);
            }
        }
        let out = Tensor::from_parts(vec![n, c, oh, ow], out);

        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record(OpKind::DepthwiseConv2d, out, &inputs, move |g, needs| {
            let gd = g.data();
            let mut gx = needs[0].then(|| vec![T::zero(); n * c * h * w]);
            let mut gw = needs[1].then(|| vec![T::zero(); c * kh * kw]);
            {
                let (xd, wd) = (xv.data(), wv.data());
                dw_taps(&dd, |o, i, k| {
                    if let Some(gx) = gx.as_mut() {
                        gx[i] += gd[o] * wd[k];
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[k] += gd[o] * xd[i];
                    }
                });
            }
            let mut grads = vec![
                gx.map(|v| Tensor::from_parts(vec![n, c, h, w], v)),
                gw.map(|v| Tensor::from_parts(vec![c, 1, kh, kw], v)),
            ];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| channel_sums(gd, n, c, oh * ow)));
            }
            grads
        }))
    }
}

#[derive(Clone, Copy)]
struct DwDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad: isize,
}

/// Calls `f(output_index, input_index, weight_index)` for every tap that
/// lands inside the input.
fn dw_taps(d: &DwDims, mut f: impl FnMut(usize, usize, usize)) {
    for s in 0..d.n {
        for ch in 0..d.c {
            let ibase = (s * d.c + ch) * d.h * d.w;
            let obase = (s * d.c + ch) * d.oh * d.ow;
            for oy in 0..d.oh {
                for ki in 0..d.kh {
                    let iy = oy as isize + ki as isize - d.pad;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for ox in 0..d.ow {
                        for kj in 0..d.kw {
                            let ix = ox as isize + kj as isize - d.pad;
                            if ix >= 0 && ix < d.w as isize {
                                f(obase + oy * d.ow + ox, ibase + iy as usize * d.w + ix as usize, (ch * d.kh + ki) * d.kw + kj);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn channel_sums<T: Scalar>(g: &[T], n: usize, c: usize, inner: usize) -> Tensor<T> {
    let mut acc = vec![T::zero(); c];
    for s in 0..n {
        for (ch, a) in acc.iter_mut().enumerate() {
            let base = (s * c + ch) * inner;
            *a += g[base..base + inner].iter().copied().sum::<T>();
        }
    }
    Tensor::from_parts(vec![c], acc)
}
