//! Small dense kernels: GEMM with transpose flags and a Cholesky
//! factorization for the symmetric positive-definite normal matrix.

use crate::error::{Error, Result};

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of logical shape m×k and
/// `op(b)` of logical shape k×n, all buffers row-major.
///
/// When `a_trans` is set, `a` is stored k×m; when `b_trans` is set, `b` is stored n×k.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // elements of the slices, whose lengths are asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

/// Pivots at or below this fraction of the largest diagonal entry count as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

impl Cholesky {
    /// Factor `matrix` (dim×dim, row-major). Only the lower triangle is read.
    /// `ridge` is reported in the error for diagnostics; it is assumed to
    /// already be on the diagonal.
    pub fn factor(matrix: &[f64], dim: usize, ridge: f64) -> Result<Self> {
        debug_assert_eq!(matrix.len(), dim * dim);
        let max_diag = (0..dim).map(|i| matrix[i * dim + i]).fold(0.0, f64::max);
        let threshold = PIVOT_TOLERANCE * max_diag;
        let mut lower = vec![0.0; dim * dim];
        for j in 0..dim {
            let row_j = j * dim;
            let mut diag = matrix[row_j + j];
            for p in 0..j {
                diag -= lower[row_j + p] * lower[row_j + p];
            }
            if !(diag > threshold) || max_diag <= 0.0 {
                return Err(Error::RankDeficient {
                    pivot: j,
                    dim,
                    value: diag,
                    ridge,
                });
            }
            let pivot = diag.sqrt();
            lower[row_j + j] = pivot;
            for i in (j + 1)..dim {
                let row_i = i * dim;
                let mut s = matrix[row_i + j];
                for p in 0..j {
                    s -= lower[row_i + p] * lower[row_j + p];
                }
                lower[row_i + j] = s / pivot;
            }
        }
        Ok(Cholesky { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solve `L Lᵀ X = B` in place for `B` of shape dim×cols (row-major).
    pub fn solve_in_place(&self, rhs: &mut [f64], cols: usize) {
        let n = self.dim;
        debug_assert_eq!(rhs.len(), n * cols);
        let l = &self.lower;
        // forward: L Y = B
        for i in 0..n {
            for p in 0..i {
                let lip = l[i * n + p];
                if lip != 0.0 {
                    for c in 0..cols {
                        rhs[i * cols + c] -= lip * rhs[p * cols + c];
                    }
                }
            }
            let d = l[i * n + i];
            for c in 0..cols {
                rhs[i * cols + c] /= d;
            }
        }
        // backward: Lᵀ X = Y
        for i in (0..n).rev() {
            for p in (i + 1)..n {
                let lpi = l[p * n + i];
                if lpi != 0.0 {
                    for c in 0..cols {
                        rhs[i * cols + c] -= lpi * rhs[p * cols + c];
                    }
                }
            }
            let d = l[i * n + i];
            for c in 0..cols {
                rhs[i * cols + c] /= d;
            }
        }
    }
}
