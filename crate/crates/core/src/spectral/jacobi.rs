//! Cyclic Jacobi eigensolver for dense symmetric matrices.
//!
//! Slower than tridiagonal QR for large matrices but accurate to working
//! precision in both eigenvalues and eigenvector orthogonality, and fully
//! deterministic. Channel counts here are small.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAX_SWEEPS: usize = 100;

/// Eigenvalues (unsorted) and eigenvectors as columns.
pub(crate) fn jacobi_eigh<T: Real>(matrix: ArrayView2<'_, T>) -> Result<(Array1<T>, Array2<T>)> {
    let n = matrix.nrows();
    let half = T::lit(0.5);
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| (matrix[[i, j]] + matrix[[j, i]]) * half);
    let mut v = Array2::eye(n);

    let scale = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let tol = T::epsilon() * scale;

    for sweep in 0..=MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= tol {
            return Ok((a.diag().to_owned(), v));
        }
        if sweep == MAX_SWEEPS {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (apq + apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(T::one()));
                let c = T::one() / t.hypot(T::one());
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    Err(Error::ConvergenceFailure { sweeps: MAX_SWEEPS })
}

fn off_diagonal_norm<T: Real>(a: &Array2<T>) -> T {
    let n = a.nrows();
    let mut sum = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            sum += a[[i, j]] * a[[i, j]];
        }
    }
    (sum + sum).sqrt()
}

/// Applies `Jᵀ A J` and `V J` for the plane rotation zeroing `a[p][q]`.
fn rotate<T: Real>(a: &mut Array2<T>, v: &mut Array2<T>, p: usize, q: usize, c: T, s: T) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        a[[k, p]] = c * akp - s * akq;
        a[[k, q]] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[[p, k]];
        let aqk = a[[q, k]];
        a[[p, k]] = c * apk - s * aqk;
        a[[q, k]] = s * apk + c * aqk;
    }
    a[[p, q]] = T::zero();
    a[[q, p]] = T::zero();
    for k in 0..n {
        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = c * vkp - s * vkq;
        v[[k, q]] = s * vkp + c * vkq;
    }
}
