use rayon::prelude::*;

use super::Scalar;

/// Strided read-only matrix view over a slice.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Scalar> MatRef<'a, T> {
    pub(crate) fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    pub(crate) fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "strided view exceeds its buffer");
        }
    }

    fn rows_from(self, r0: usize, rows: usize) -> Self {
        Self { data: &self.data[r0 * self.rs..], rows, ..self }
    }
}

// Below this many multiply-adds a split across threads costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 18;

/// `c = a·b + beta·c`, `c` row-major `[a.rows, b.cols]`.
///
/// Rows of `c` are split across the current rayon pool only when called from
/// inside one; callers on a plain thread always get the serial kernel.
pub(crate) fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "inner extents");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n, "output extent");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    a.check();
    b.check();

    let threads = rayon::current_num_threads();
    if rayon::current_thread_index().is_some() && threads > 1 && m * n * k >= PAR_THRESHOLD && m >= 2 {
        let chunk_rows = m.div_ceil(threads);
        c.par_chunks_mut(chunk_rows * n).enumerate().for_each(|(i, cc)| {
            let rows = cc.len() / n;
            gemm_serial(a.rows_from(i * chunk_rows, rows), b, beta, cc);
        });
    } else {
        gemm_serial(a, b, beta, c);
    }
}

fn gemm_serial<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    // SAFETY: both views were bounds-checked against their slices and `c`
    // holds exactly m·n row-major elements.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major `out[m,n] (+)= a[m,k] · b[k,n]`.
pub fn matmul_into<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    gemm(MatRef::row_major(a, m, k), MatRef::row_major(b, k, n), beta, out);
}
