//! Small dense linear-algebra helpers: skew operator, symmetric Jacobi
//! eigendecomposition, and condition-checked linear solves.
//!
//! Everything here targets matrices of order ≤ 10, which is all the filters
//! need; the Jacobi method is exact and unconditionally stable at these sizes.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Skew-symmetric matrix of `a`, so that `skew(a) * b == a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Maximum absolute asymmetry `|A - Aᵀ|∞`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a small symmetric matrix by the cyclic Jacobi method.
///
/// Returns eigenvalues in ascending order with the matching orthonormal
/// eigenvectors as columns. Fails if `a` is not symmetric within `sym_tol`
/// or if the sweep does not converge (which does not happen for symmetric
/// input at these sizes).
pub struct SymmetricEigen {
    pub eigenvalues: DVector<f64>,
    /// Column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
}

const JACOBI_SWEEPS: usize = 50;
const SYM_TOL: f64 = 1e-10;

pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension {
            context: "symmetric_eigen",
            expected: "square matrix".into(),
            got: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let asym = asymmetry(a);
    if asym > SYM_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "symmetric_eigen",
        });
    }

    let mut m = a.clone();
    // Work on the symmetrized copy so roundoff in the input cannot bias rotations.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);

    let off = |m: &DMatrix<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[(i, j)].abs();
            }
        }
        s
    };

    let tol = f64::EPSILON * scale * (n * n) as f64;
    let mut converged = false;
    for _ in 0..JACOBI_SWEEPS {
        if off(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::EPSILON * scale * 1e-4 {
                    continue;
                }
                let theta = 0.5 * (m[(q, q)] - m[(p, p)]) / apq;
                let t = if theta.abs() > 1e10 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // A <- Jᵀ A J on rows/columns p and q.
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off(&m) > tol {
        return Err(Error::EigenDiverged {
            sweeps: JACOBI_SWEEPS,
            offdiag: off(&m),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src).normalize();
        eigenvectors.set_column(dst, &col);
    }
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Solves `A x = b` by LU with partial pivoting, rejecting systems whose
/// pivot ratio suggests a condition number above `1e12`.
pub fn solve_checked(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    context: &'static str,
) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let diag = lu.u().diagonal();
    let max_pivot = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min_pivot = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    // NaN pivots take the singular branch as well.
    if min_pivot.is_nan() || min_pivot <= max_pivot * 1e-12 {
        return Err(Error::Singular { context });
    }
    lu.solve(b).ok_or(Error::Singular { context })
}

/// Symmetrizes a matrix in place: `A <- (A + Aᵀ)/2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
}
