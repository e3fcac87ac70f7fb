//! One-sided Jacobi SVD, used to cap singular values.
//!
//! Sweeps Jacobi rotations over column pairs of the (possibly transposed)
//! matrix until all columns are mutually orthogonal, which yields
//! `A V = U diag(sigma)`. Capping then rescales each column and multiplies
//! back by `V^T`. The matrices involved are small (network kernels reshaped
//! to out-channels x rest), where the method is accurate and plenty fast.

const ORTHO_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 64;

/// Row-major matrix view used by the clipper.
pub struct MatrixMut<'a> {
    pub data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
}

/// Singular values of a row-major `rows x cols` matrix, descending.
pub fn singular_values(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (mut work, _, n) = to_tall_columns(data, rows, cols);
    let mut v = identity(n);
    jacobi_orthogonalize(&mut work, &mut v);
    let mut sigma: Vec<f64> = work.iter().map(|col| norm(col)).collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sigma
}

/// Caps every singular value at `cap`, in place. Returns `true` when the
/// matrix was modified; a matrix already within the bound is left bit-exact.
pub fn clip_singular_values(matrix: MatrixMut<'_>, cap: f64) -> bool {
    let rows = matrix.rows;
    let cols = matrix.cols;
    let (mut work, transposed, n) = to_tall_columns(matrix.data, rows, cols);
    let mut v = identity(n);
    jacobi_orthogonalize(&mut work, &mut v);

    let sigma: Vec<f64> = work.iter().map(|col| norm(col)).collect();
    if sigma.iter().all(|&s| s <= cap) {
        return false;
    }

    // scale columns of U*Sigma down to the cap, then restore A = (U Sigma') V^T
    for (col, &s) in work.iter_mut().zip(&sigma) {
        if s > cap {
            let f = cap / s;
            for x in col.iter_mut() {
                *x *= f;
            }
        }
    }
    let m = work[0].len();
    // result[i][j] = sum_k work[k][i] * v[j*n + k]  (V^T has entry (k,j) = V[j,k])
    let mut result = vec![0.0; m * n];
    for (k, col) in work.iter().enumerate() {
        for j in 0..n {
            let vjk = v[j * n + k];
            if vjk == 0.0 {
                continue;
            }
            for (i, &x) in col.iter().enumerate() {
                result[i * n + j] += x * vjk;
            }
        }
    }
    if transposed {
        // result is (cols x rows) of the transposed problem; write back A^T
        for r in 0..rows {
            for c in 0..cols {
                matrix.data[r * cols + c] = result[c * rows + r];
            }
        }
    } else {
        matrix.data.copy_from_slice(&result);
    }
    true
}

/// Returns columns of the matrix (transposed if needed so rows >= cols),
/// the transposed flag, and the column count.
fn to_tall_columns(data: &[f64], rows: usize, cols: usize) -> (Vec<Vec<f64>>, bool, usize) {
    if rows >= cols {
        let mut out = vec![vec![0.0; rows]; cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c][r] = data[r * cols + c];
            }
        }
        (out, false, cols)
    } else {
        let mut out = vec![vec![0.0; cols]; rows];
        for r in 0..rows {
            for c in 0..cols {
                out[r][c] = data[r * cols + c];
            }
        }
        (out, true, rows)
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    v
}

fn norm(col: &[f64]) -> f64 {
    col.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn jacobi_orthogonalize(work: &mut [Vec<f64>], v: &mut [f64]) {
    let n = work.len();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for (x, y) in work[p].iter().zip(&work[q]) {
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if apq.abs() <= ORTHO_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // rotate the column pair and the same rows of V
                let (lo, hi) = work.split_at_mut(q);
                let (cp, cq) = (&mut lo[p], &mut hi[0]);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let xp = c * *x - s * *y;
                    let xq = s * *x + c * *y;
                    *x = xp;
                    *y = xq;
                }
                for row in 0..n {
                    let vp = v[row * n + p];
                    let vq = v[row * n + q];
                    v[row * n + p] = c * vp - s * vq;
                    v[row * n + q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identity_matrix_is_untouched() {
        let mut data = identity(4);
        let original = data.clone();
        let changed = clip_singular_values(MatrixMut { data: &mut data, rows: 4, cols: 4 }, 1.0);
        assert!(!changed);
        assert_eq!(data, original);
    }

    #[test]
    fn diagonal_matrix_clips_only_large_values() {
        let mut data = vec![2.0, 0.0, 0.0, 0.5];
        let changed = clip_singular_values(MatrixMut { data: &mut data, rows: 2, cols: 2 }, 1.0);
        assert!(changed);
        assert!((data[0] - 1.0).abs() < 1e-12);
        assert!((data[3] - 0.5).abs() < 1e-12);
        assert!(data[1].abs() < 1e-12 && data[2].abs() < 1e-12);
    }

    #[test]
    fn singular_values_of_known_matrix() {
        // [[3, 0], [4, 5]] has singular values sqrt(45) and sqrt(5)
        let data = vec![3.0, 0.0, 4.0, 5.0];
        let sv = singular_values(&data, 2, 2);
        assert!((sv[0] - 45.0f64.sqrt()).abs() < 1e-10, "{sv:?}");
        assert!((sv[1] - 5.0f64.sqrt()).abs() < 1e-10, "{sv:?}");
    }

    #[test]
    fn wide_and_tall_matrices_round_trip() {
        let mut rng = crate::seed::rng_from_seed(42);
        for &(rows, cols) in &[(3usize, 7usize), (7, 3), (5, 5), (1, 6), (6, 1)] {
            let mut data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let before = singular_values(&data, rows, cols);
            clip_singular_values(MatrixMut { data: &mut data, rows, cols }, 1.0);
            let after = singular_values(&data, rows, cols);
            for (b, a) in before.iter().zip(&after) {
                let expected = b.min(1.0);
                assert!((a - expected).abs() < 1e-9, "{rows}x{cols}: {b} -> {a}");
            }
        }
    }
}
