//! Symmetric eigendecomposition via the cyclic Jacobi method.
//!
//! Small dense matrices only (joint graphs have at most a few dozen nodes),
//! so Jacobi's unconditional robustness beats anything fancier here.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maximum number of full Jacobi sweeps before giving up.
const MAX_SWEEPS: usize = 100;
/// Largest matrix order accepted.
const MAX_ORDER: usize = 64;
/// Absolute symmetry tolerance on the input.
const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues in ascending order with eigenvector columns aligned.
#[derive(Debug, Clone)]
pub struct EigenDecomposition<T> {
    pub values: Vec<T>,
    /// n×n matrix whose `i`-th column is the eigenvector of `values[i]`.
    pub vectors: Tensor<T>,
}

/// Diagonalizes a real symmetric matrix with cyclic Jacobi rotations,
/// sweeping until the off-diagonal Frobenius norm drops below `tol`.
///
/// Eigenvalues are returned in ascending order; ties keep the order the
/// rotations produced. Fails on non-square, non-symmetric (beyond 1e-12),
/// oversized (n > 64) input, or if 100 sweeps do not converge.
pub fn symmetric_eigen<T: Scalar>(m: &Tensor<T>, tol: T) -> Result<EigenDecomposition<T>> {
    if m.ndim() != 2 || m.shape()[0] != m.shape()[1] {
        return Err(Error::Eigen(format!(
            "expected a square matrix, got shape {:?}",
            m.shape()
        )));
    }
    let n = m.shape()[0];
    if n == 0 {
        return Err(Error::Eigen("empty matrix".into()));
    }
    if n > MAX_ORDER {
        return Err(Error::Eigen(format!("order {n} exceeds the limit {MAX_ORDER}")));
    }
    let sym_tol = T::of(SYMMETRY_TOL);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.at(i, j) - m.at(j, i)).abs() > sym_tol {
                return Err(Error::Eigen(format!(
                    "matrix not symmetric at ({i},{j}): {} vs {}",
                    m.at(i, j),
                    m.at(j, i)
                )));
            }
        }
    }

    let mut a = m.clone();
    let mut v = Tensor::<T>::eye(n);
    let mut converged = false;
    for _ in 0..=MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged {
        return Err(Error::Eigen(format!(
            "no convergence after {MAX_SWEEPS} sweeps (off-diagonal norm {})",
            off_diagonal_norm(&a)
        )));
    }

    // Sort ascending, carrying eigenvector columns along. Stable, so ties
    // keep rotation order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.at(i, i)
            .partial_cmp(&a.at(j, j))
            .expect("non-finite eigenvalue")
    });
    let values: Vec<T> = order.iter().map(|&i| a.at(i, i)).collect();
    let mut vectors = Tensor::<T>::zeros(&[n, n]);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            *vectors.at_mut(r, dst) = v.at(r, src);
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Frobenius norm of the off-diagonal part.
fn off_diagonal_norm<T: Scalar>(a: &Tensor<T>) -> T {
    let n = a.rows();
    let mut s = T::zero();
    for p in 0..n {
        for q in 0..n {
            if p != q {
                s += a.at(p, q) * a.at(p, q);
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate<T: Scalar>(a: &mut Tensor<T>, v: &mut Tensor<T>, p: usize, q: usize) {
    let apq = a.at(p, q);
    if apq == T::zero() {
        return;
    }
    let theta = (a.at(q, q) - a.at(p, p)) / (T::of(2.0) * apq);
    let t = {
        let mag = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
        if theta < T::zero() {
            -mag
        } else {
            mag
        }
    };
    let c = T::one() / (t * t + T::one()).sqrt();
    let s = t * c;

    let n = a.rows();
    let app = a.at(p, p);
    let aqq = a.at(q, q);
    *a.at_mut(p, p) = c * c * app - T::of(2.0) * s * c * apq + s * s * aqq;
    *a.at_mut(q, q) = s * s * app + T::of(2.0) * s * c * apq + c * c * aqq;
    *a.at_mut(p, q) = T::zero();
    *a.at_mut(q, p) = T::zero();
    for j in 0..n {
        if j != p && j != q {
            let ajp = a.at(j, p);
            let ajq = a.at(j, q);
            let np = c * ajp - s * ajq;
            let nq = s * ajp + c * ajq;
            *a.at_mut(j, p) = np;
            *a.at_mut(p, j) = np;
            *a.at_mut(j, q) = nq;
            *a.at_mut(q, j) = nq;
        }
    }
    for j in 0..n {
        let vjp = v.at(j, p);
        let vjq = v.at(j, q);
        *v.at_mut(j, p) = c * vjp - s * vjq;
        *v.at_mut(j, q) = s * vjp + c * vjq;
    }
}
