//! Parameter-free axial shift of channel groups.

use crate::error::{contract_err, Result};
use crate::tensor::{OpKind, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShiftAxis {
    Height,
    Width,
}

/// Channel range of group `k` when `c` channels are split into `partitions`
/// contiguous groups; the last group takes the remainder.
pub fn partition_range(c: usize, partitions: usize, k: usize) -> std::ops::Range<usize> {
    let base = c / partitions;
    let start = k * base;
    let end = if k + 1 == partitions { c } else { start + base };
    start..end
}

fn shift_data<T: Scalar>(
    src: &[T],
    dims: (usize, usize, usize, usize),
    axis: ShiftAxis,
    offsets: &[isize],
    sign: isize,
) -> Vec<T> {
    let (n, c, h, w) = dims;
    let mut dst = vec![T::zero(); src.len()];
    for (k, &off) in offsets.iter().enumerate() {
        let off = off * sign;
        for s in 0..n {
            for ch in partition_range(c, offsets.len(), k) {
                let base = (s * c + ch) * h * w;
                let (sp, dp) = (&src[base..base + h * w], &mut dst[base..base + h * w]);
                for y in 0..h {
                    for x in 0..w {
                        let (sy, sx) = match axis {
                            ShiftAxis::Height => (y as isize - off, x as isize),
                            ShiftAxis::Width => (y as isize, x as isize - off),
                        };
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            dp[y * w + x] = sp[sy as usize * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    dst
}

impl<T: Scalar> Tape<T> {
    /// Splits channels into `offsets.len()` groups and translates group `k`
    /// by `offsets[k]` along `axis`, zero-filling vacated positions.
    pub fn shift_channels(&self, x: &Var<T>, axis: ShiftAxis, partitions: usize, offsets: &[isize]) -> Result<Var<T>> {
        let dims = x.value().dims4()?;
        if partitions == 0 || offsets.len() != partitions {
            return contract_err(format!("shift_channels: {} offsets for {partitions} partitions", offsets.len()));
        }
        let extent = match axis {
            ShiftAxis::Height => dims.2,
            ShiftAxis::Width => dims.3,
        };
        if let Some(bad) = offsets.iter().find(|o| o.unsigned_abs() >= extent) {
            return contract_err(format!("shift_channels: offset {bad} does not fit a {axis:?} extent of {extent}"));
        }
        let offsets = offsets.to_vec();
        let out = Tensor::from_parts(x.shape().to_vec(), shift_data(x.value().data(), dims, axis, &offsets, 1));
        Ok(self.record(OpKind::Shift, out, &[x], move |g, _| {
            vec![Some(Tensor::from_parts(g.shape().to_vec(), shift_data(g.data(), dims, axis, &offsets, -1)))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_offsets_are_identity() {
        let tape = Tape::<f32>::disabled();
        let x = Var::constant(Tensor::from_vec(&[1, 3, 2, 2], (0..12).map(|i| i as f32).collect()).unwrap());
        let y = tape.shift_channels(&x, ShiftAxis::Width, 3, &[0, 0, 0]).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn width_shift_fills_zero() {
        let tape = Tape::<f32>::disabled();
        let x = Var::constant(Tensor::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.shift_channels(&x, ShiftAxis::Width, 1, &[1]).unwrap();
        assert_eq!(y.value().data(), &[0.0, 1.0, 2.0, 3.0]);
        let y = tape.shift_channels(&x, ShiftAxis::Width, 1, &[-2]).unwrap();
        assert_eq!(y.value().data(), &[3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn remainder_goes_to_last_group() {
        assert_eq!(partition_range(7, 3, 0), 0..2);
        assert_eq!(partition_range(7, 3, 1), 2..4);
        assert_eq!(partition_range(7, 3, 2), 4..7);
    }

    #[test]
    fn oversized_offset_is_a_contract_error() {
        let tape = Tape::<f32>::disabled();
        let x = Var::constant(Tensor::zeros(&[1, 2, 2, 2]).unwrap());
        assert!(matches!(
            tape.shift_channels(&x, ShiftAxis::Height, 2, &[0, 2]),
            Err(crate::Error::Contract(_))
        ));
        assert!(tape.shift_channels(&x, ShiftAxis::Height, 2, &[0]).is_err());
    }
}
