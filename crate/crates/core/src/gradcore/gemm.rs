//! Register-blocked matrix multiply-accumulate used by the convolution kernels.
//!
//! Every output element is accumulated as a fused multiply-add chain over the
//! inner dimension in ascending order, independent of tiling, so results are
//! bit-reproducible across block sizes and platforms with IEEE `fma`.

use crate::scalar::Scalar;

const MR: usize = 8;
const NR: usize = 16;
const KC: usize = 256;

/// Strided read-only matrix view: element `(i, p)` lives at `i * row_stride + p * col_stride`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        MatRef { data, row_stride: cols, col_stride: 1 }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        MatRef { data, row_stride: 1, col_stride: cols }
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`, with `b` and `c` row-major.
pub(crate) fn gemm_acc<T: Scalar>(m: usize, n: usize, k: usize, a: MatRef<'_, T>, b: &[T], c: &mut [T]) {
    debug_assert!(b.len() >= k * n);
    debug_assert!(c.len() >= m * n);
    for p0 in (0..k).step_by(KC) {
        let kc = KC.min(k - p0);
        for j0 in (0..n).step_by(NR) {
            let nr = NR.min(n - j0);
            for i0 in (0..m).step_by(MR) {
                let mr = MR.min(m - i0);
                if mr == MR && nr == NR {
                    kernel_full(kc, a, i0, p0, b, n, j0, c);
                } else {
                    kernel_edge(mr, nr, kc, a, i0, p0, b, n, j0, c);
                }
            }
        }
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn kernel_full<T: Scalar>(
    kc: usize,
    a: MatRef<'_, T>,
    i0: usize,
    p0: usize,
    b: &[T],
    n: usize,
    j0: usize,
    c: &mut [T],
) {
    let mut acc = [[T::zero(); NR]; MR];
    for (r, row) in acc.iter_mut().enumerate() {
        let start = (i0 + r) * n + j0;
        row.copy_from_slice(&c[start..start + NR]);
    }
    let mut a_rows = [0usize; MR];
    for (r, off) in a_rows.iter_mut().enumerate() {
        *off = (i0 + r) * a.row_stride + p0 * a.col_stride;
    }
    for p in 0..kc {
        let start = (p0 + p) * n + j0;
        let brow: &[T; NR] = b[start..start + NR].try_into().unwrap();
        let a_col = p * a.col_stride;
        for r in 0..MR {
            let av = a.data[a_rows[r] + a_col];
            let row = &mut acc[r];
            for j in 0..NR {
                row[j] = av.mul_add(brow[j], row[j]);
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        let start = (i0 + r) * n + j0;
        c[start..start + NR].copy_from_slice(row);
    }
}

#[allow(clippy::too_many_arguments)]
fn kernel_edge<T: Scalar>(
    mr: usize,
    nr: usize,
    kc: usize,
    a: MatRef<'_, T>,
    i0: usize,
    p0: usize,
    b: &[T],
    n: usize,
    j0: usize,
    c: &mut [T],
) {
    for r in 0..mr {
        let a_row = (i0 + r) * a.row_stride;
        let c_row = (i0 + r) * n + j0;
        for j in 0..nr {
            let mut acc = c[c_row + j];
            for p in p0..p0 + kc {
                acc = a.data[a_row + p * a.col_stride].mul_add(b[p * n + j0 + j], acc);
            }
            c[c_row + j] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        for i in 0..m {
            for j in 0..n {
                let mut acc = c[i * n + j];
                for p in 0..k {
                    acc = a[i * k + p].mul_add(b[p * n + j], acc);
                }
                c[i * n + j] = acc;
            }
        }
    }

    #[test]
    fn matches_naive_bitwise_on_ragged_sizes() {
        let mut rng = Pcg32::seeded(11);
        for &(m, n, k) in &[(1, 1, 1), (9, 17, 3), (16, 32, 300), (23, 18, 515), (8, 16, 256)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
            let init: Vec<f64> = (0..m * n).map(|_| rng.normal()).collect();
            let mut want = init.clone();
            naive(m, n, k, &a, &b, &mut want);
            let mut got = init.clone();
            gemm_acc(m, n, k, MatRef::row_major(&a, k), &b, &mut got);
            assert_eq!(got, want, "m={m} n={n} k={k}");
        }
    }

    #[test]
    fn transposed_view_reads_columns() {
        // a is stored as k x m; use its transpose as the m x k operand
        let (m, n, k) = (10, 5, 7);
        let mut rng = Pcg32::seeded(3);
        let at: Vec<f64> = (0..k * m).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        let mut a = vec![0.0; m * k];
        for p in 0..k {
            for i in 0..m {
                a[i * k + p] = at[p * m + i];
            }
        }
        let mut want = vec![0.0; m * n];
        naive(m, n, k, &a, &b, &mut want);
        let mut got = vec![0.0; m * n];
        gemm_acc(m, n, k, MatRef::transposed(&at, m), &b, &mut got);
        assert_eq!(got, want);
    }
}
