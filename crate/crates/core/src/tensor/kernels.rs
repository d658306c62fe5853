//! Matrix kernels. Every output element is reduced over the inner index in
//! ascending order, so results do not depend on blocking.

use crate::scalar::Scalar;

/// `c[m,n] += a[m,k] · b[k,n]`, all row-major and contiguous.
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 || k == 0 {
        return;
    }
    let mut rows = c.chunks_exact_mut(n).zip(a.chunks_exact(k));
    // four output rows share each streamed row of `b`
    loop {
        let (Some((c0, a0)), Some((c1, a1)), Some((c2, a2)), Some((c3, a3))) =
            (rows.next(), rows.next(), rows.next(), rows.next())
        else {
            break;
        };
        for (p, brow) in b.chunks_exact(n).enumerate() {
            let (s0, s1, s2, s3) = (a0[p], a1[p], a2[p], a3[p]);
            for ((((x0, x1), x2), x3), &bv) in c0
                .iter_mut()
                .zip(c1.iter_mut())
                .zip(c2.iter_mut())
                .zip(c3.iter_mut())
                .zip(brow)
            {
                *x0 += s0 * bv;
                *x1 += s1 * bv;
                *x2 += s2 * bv;
                *x3 += s3 * bv;
            }
        }
    }
    // leftover rows (m mod 4); the iterator above consumed them already when
    // the let-else failed, so redo them from the tail
    let done = (m / 4) * 4;
    for i in done..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, brow) in b.chunks_exact(n).enumerate() {
            let s = arow[p];
            for (x, &bv) in crow.iter_mut().zip(brow) {
                *x += s * bv;
            }
        }
    }
}

/// Transposes a row-major `[rows, cols]` matrix into `[cols, rows]`.
pub fn transpose<T: Scalar>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    const BLOCK: usize = 32;
    for i0 in (0..rows).step_by(BLOCK) {
        for j0 in (0..cols).step_by(BLOCK) {
            for i in i0..(i0 + BLOCK).min(rows) {
                for j in j0..(j0 + BLOCK).min(cols) {
                    out[j * rows + i] = a[i * cols + j];
                }
            }
        }
    }
    out
}

/// `c[m,n] += a[m,k] · b[n,k]ᵀ`.
pub(crate) fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let bt = transpose(n, k, b);
    gemm(m, k, n, a, &bt, c);
}

/// `c[k,n] += a[m,k]ᵀ · d[m,n]`.
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], d: &[T], c: &mut [T]) {
    let at = transpose(m, k, a);
    gemm(k, m, n, &at, d, c);
}
