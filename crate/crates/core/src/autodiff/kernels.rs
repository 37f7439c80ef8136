//! Dense row-major matrix kernels. Loop orders keep the innermost loop over a
//! contiguous output row so it vectorizes.

use super::Scalar;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] += a[m×k] · b[k×n]`
///
/// Full `MR×NR` tiles of `c` are accumulated in registers. Every output
/// element still sums its products in increasing `p`, so tiling does not
/// change results.
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let m_tiled = m - m % MR;
    let n_tiled = n - n % NR;
    for i in (0..m_tiled).step_by(MR) {
        for j in (0..n_tiled).step_by(NR) {
            let mut acc = [[T::zero(); NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * n + j..][..NR]);
            }
            for p in 0..k {
                let bv: &[T; NR] = b[p * n + j..][..NR].try_into().expect("NR columns");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for (x, &bx) in row.iter_mut().zip(bv) {
                        *x += av * bx;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j..][..NR].copy_from_slice(row);
            }
        }
        if n_tiled < n {
            rows_acc(a, b, c, i..i + MR, k, n, n_tiled);
        }
    }
    rows_acc(a, b, c, m_tiled..m, k, n, 0);
}

/// Untiled fallback over `rows`, columns `from..n`.
fn rows_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], rows: std::ops::Range<usize>, k: usize, n: usize, from: usize) {
    for i in rows {
        let c_row = &mut c[i * n + from..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n + from..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let at = transpose(a, m, k);
    matmul_acc(&at, b, c, k, m, n);
}

/// Returns the `cols×rows` transpose of a `rows×cols` matrix.
pub(crate) fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let bt = transpose(b, n, k);
    matmul_acc(a, &bt, c, m, k, n);
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
