//! Dense inner loops shared by the tape ops. Every reduction runs in a fixed
//! order, so results are bitwise reproducible.

use alloc::vec;
use alloc::vec::Vec;

/// Dot product with four interleaved accumulators, combined in a fixed order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major. Each `c[i][j]` starts from
/// its current value and accumulates over `p` in increasing order, whatever
/// tile it falls in.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    const R: usize = 4;
    const L: usize = 8;
    let mut i = 0;
    while i + R <= m {
        let mut j = 0;
        while j + L <= n {
            let mut acc = [[0.0; L]; R];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + L]);
            }
            for p in 0..k {
                let bv: &[f64; L] = b[p * n + j..p * n + j + L].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for l in 0..L {
                        row[l] += av * bv[l];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + L].copy_from_slice(row);
            }
            j += L;
        }
        for r in i..i + R {
            edge(a, b, c, r, j, k, n);
        }
        i += R;
    }
    for r in i..m {
        edge(a, b, c, r, 0, k, n);
    }
}

/// Row `r` of `c`, columns `j0..n`, in the same order as the tiled path.
fn edge(a: &[f64], b: &[f64], c: &mut [f64], r: usize, j0: usize, k: usize, n: usize) {
    if j0 == n {
        return;
    }
    let ci = &mut c[r * n + j0..(r + 1) * n];
    for p in 0..k {
        axpy(a[r * k + p], &b[p * n + j0..(p + 1) * n], ci);
    }
}

/// `c[m×n] += aᵀ · b` with `a` stored as `[k×m]`; the summation order
/// matches [`matmul_acc`].
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let br = &b[p * n..(p + 1) * n];
        for (i, ci) in c[..m * n].chunks_exact_mut(n).enumerate() {
            axpy(a[p * m + i], br, ci);
        }
    }
}

/// Row-major `rows × cols` to `cols × rows`.
pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for (c, v) in a[r * cols..(r + 1) * cols].iter().enumerate() {
            out[c * rows + r] = *v;
        }
    }
    out
}
