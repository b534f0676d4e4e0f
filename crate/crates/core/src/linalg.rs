//! Symmetric positive-definite solves via Cholesky factorization.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower-triangular `L` with `L Lᵀ = a`. Fails if `a` is not numerically
/// positive definite.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Numerical(format!("cholesky of non-square {}", a.shape())));
    }
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Numerical(format!("matrix not positive definite at pivot {j}")));
        }
        let d = diag.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Tensor::new(n, n, l)
}

/// Solves `L x = b` for lower-triangular `L`, column by column of `b`.
pub fn solve_lower(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = l.rows();
    let m = b.cols();
    let mut x = b.data().to_vec();
    for c in 0..m {
        for i in 0..n {
            let mut s = x[i * m + c];
            for k in 0..i {
                s -= l.get(i, k) * x[k * m + c];
            }
            x[i * m + c] = s / l.get(i, i);
        }
    }
    Tensor::new(n, m, x)
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_upper_t(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = l.rows();
    let m = b.cols();
    let mut x = b.data().to_vec();
    for c in 0..m {
        for i in (0..n).rev() {
            let mut s = x[i * m + c];
            for k in (i + 1)..n {
                s -= l.get(k, i) * x[k * m + c];
            }
            x[i * m + c] = s / l.get(i, i);
        }
    }
    Tensor::new(n, m, x)
}

/// `a⁻¹ b` given the Cholesky factor of `a`.
pub fn cholesky_solve(l: &Tensor, b: &Tensor) -> Result<Tensor> {
    solve_upper_t(l, &solve_lower(l, b)?)
}
