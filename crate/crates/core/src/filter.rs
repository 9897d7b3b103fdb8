//! Recursive estimators: information-form least squares with a forgetting
//! factor, state-dependent observation-covariance propagation, and the exact
//! constrained dual-quaternion pose filter.
//!
//! The pose filter exploits that the estimated transform is constant: the
//! rotation estimate is the minimum-eigenvalue eigenvector of the accumulated
//! information matrix (exactly optimal on the unit sphere), and the
//! translation part solves a bordered linear system enforcing `q_d ⊥ q_r`
//! exactly — no renormalization step exists anywhere in the loop.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::dq::{DualQuat, Quat, UnitDualQuat};
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, solve_checked, symmetric_eigen, symmetrize};
use crate::obs::{LinearObservation, PoseObservation};

/// Relative eigenvalue gap below which the minimum eigenvalue is treated as
/// multiple and the tie-break against the previous estimate engages.
pub const EIGEN_MULT_TOL: f64 = 1e-8;

/// Information-form recursive least squares with forgetting factor `λ ≥ 1`.
///
/// Each update solves the two-term quadratic (prior + innovation) in closed
/// form and then discounts the information matrix:
///
/// ```text
/// x ← x + (P⁻¹ + Hᵀ R⁻¹ H)⁻¹ Hᵀ R⁻¹ (y − Hx)
/// P⁻¹ ← (P⁻¹ + Hᵀ R⁻¹ H) / λ
/// ```
///
/// With `λ = 1` this is exactly the Kalman correction step.
#[derive(Debug, Clone)]
pub struct Rls {
    pub x: DVector<f64>,
    /// Information matrix `P⁻¹`, kept symmetric positive definite.
    pub info: DMatrix<f64>,
    pub lambda: f64,
}

impl Rls {
    pub fn new(x0: DVector<f64>, p0_inv: DMatrix<f64>, lambda: f64) -> Result<Self> {
        let n = x0.len();
        if p0_inv.nrows() != n || p0_inv.ncols() != n {
            return Err(Error::Dimension {
                context: "Rls::new",
                expected: format!("{n}x{n}"),
                got: format!("{}x{}", p0_inv.nrows(), p0_inv.ncols()),
            });
        }
        let scale = p0_inv.amax().max(1.0);
        let asym = asymmetry(&p0_inv);
        if asym > 1e-10 * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        if p0_inv.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite {
                context: "initial information matrix",
            });
        }
        if lambda.is_nan() || lambda < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "forgetting factor must be ≥ 1, got {lambda}"
            )));
        }
        Ok(Rls {
            x: x0,
            info: p0_inv,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn update(&mut self, obs: &LinearObservation) -> Result<()> {
        let n = self.dim();
        if obs.unknowns() != n {
            return Err(Error::Dimension {
                context: "Rls::update",
                expected: n.to_string(),
                got: obs.unknowns().to_string(),
            });
        }
        let r_chol = obs.r.clone().cholesky().ok_or(Error::Singular {
            context: "observation covariance",
        })?;
        // W = R⁻¹ H and R⁻¹ (y − Hx) via triangular solves.
        let w = r_chol.solve(&obs.h);
        let innovation = &obs.y - &obs.h * &self.x;
        let htr_inn = obs.h.transpose() * r_chol.solve(&innovation);
        let mut gained = &self.info + obs.h.transpose() * w;
        symmetrize(&mut gained);

        let chol = gained
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite {
                context: "updated information matrix",
            })?;
        let dx = chol.solve(&htr_inn);
        self.x += dx;
        self.info = gained / self.lambda;
        Ok(())
    }

    /// Current covariance `P = (P⁻¹)⁻¹`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        self.info
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::NotPositiveDefinite {
                context: "information matrix",
            })
    }
}

/// Linear matrix function descriptor for [`covariance_propagate`]: `eval(x)`
/// returns the `rows × noise_dim` map from noise to output at state `x`, and
/// must be affine in `x` (the state-uncertainty term uses only its linear
/// part).
pub struct MatrixFn<'a> {
    pub rows: usize,
    pub noise_dim: usize,
    pub state_dim: usize,
    pub eval: &'a dyn Fn(&DVector<f64>) -> DMatrix<f64>,
}

/// Propagates uncertainty through `y = G(x) b + c` with independent `x`, `b`,
/// `c`:
///
/// ```text
/// Σy = G(x) Σb G(x)ᵀ + N (Σb ⊗ Σx) Nᵀ + Σc
/// ```
///
/// where `N = [G₁ … G_m]` is assembled column-block-wise from the matrices
/// `Gᵢ` defined by `Gᵢ x = G(x) eᵢ`. Zero blocks of `Σb` are skipped.
pub fn covariance_propagate(
    g: &MatrixFn,
    x: &DVector<f64>,
    sigma_b: &DMatrix<f64>,
    sigma_x: &DMatrix<f64>,
    sigma_c: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, m, l) = (g.rows, g.noise_dim, g.state_dim);
    if x.len() != l {
        return Err(Error::Dimension {
            context: "covariance_propagate x",
            expected: l.to_string(),
            got: x.len().to_string(),
        });
    }
    if sigma_b.nrows() != m || sigma_b.ncols() != m {
        return Err(Error::Dimension {
            context: "covariance_propagate sigma_b",
            expected: format!("{m}x{m}"),
            got: format!("{}x{}", sigma_b.nrows(), sigma_b.ncols()),
        });
    }
    if sigma_x.nrows() != l || sigma_x.ncols() != l {
        return Err(Error::Dimension {
            context: "covariance_propagate sigma_x",
            expected: format!("{l}x{l}"),
            got: format!("{}x{}", sigma_x.nrows(), sigma_x.ncols()),
        });
    }
    if sigma_c.nrows() != n || sigma_c.ncols() != n {
        return Err(Error::Dimension {
            context: "covariance_propagate sigma_c",
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", sigma_c.nrows(), sigma_c.ncols()),
        });
    }

    let g_at_x = (g.eval)(x);
    if g_at_x.nrows() != n || g_at_x.ncols() != m {
        return Err(Error::Dimension {
            context: "covariance_propagate eval",
            expected: format!("{n}x{m}"),
            got: format!("{}x{}", g_at_x.nrows(), g_at_x.ncols()),
        });
    }
    let mut sigma_y = &g_at_x * sigma_b * g_at_x.transpose() + sigma_c;

    if sigma_x.amax() > 0.0 {
        // Columns of Gᵢ come from evaluating G on the state basis; subtract
        // the affine offset so only the linear part enters.
        let g0 = (g.eval)(&DVector::zeros(l));
        let mut basis = Vec::with_capacity(l);
        for k in 0..l {
            let mut e = DVector::zeros(l);
            e[k] = 1.0;
            basis.push((g.eval)(&e) - &g0);
        }
        let g_i = |i: usize| -> DMatrix<f64> { DMatrix::from_fn(n, l, |r, k| basis[k][(r, i)]) };
        let mats: Vec<DMatrix<f64>> = (0..m).map(g_i).collect();
        for i in 0..m {
            for j in 0..m {
                let s = sigma_b[(i, j)];
                if s == 0.0 {
                    continue;
                }
                sigma_y += &mats[i] * sigma_x * mats[j].transpose() * s;
            }
        }
    }
    symmetrize(&mut sigma_y);
    Ok(sigma_y)
}

/// Exact constrained filter for a constant relative pose on unit dual
/// quaternions. Accumulates the information matrix of the rotation rows and
/// the rotation–translation cross term; the rotation estimate is the
/// minimum-eigenvalue unit eigenvector (scalar part ≥ 0) and the translation
/// part solves the bordered KKT system of the orthogonality-constrained
/// quadratic.
#[derive(Debug, Clone)]
pub struct DqPoseFilter {
    /// Accumulated `Σ H_ωᵀ R⁻¹ H_ω`.
    pub info_r: Matrix4<f64>,
    /// Accumulated cross term `S = −Σ H_ωᵀ R⁻¹ H_v`.
    pub cross: Matrix4<f64>,
    q_r: Vector4<f64>,
    q_d: Vector4<f64>,
    lambda: f64,
    updates: usize,
    /// The last rotation solve hit a min-eigenvalue tie (insufficient
    /// excitation); the estimate fell back to the previous-information metric.
    pub tie_detected: bool,
    /// The last translation solve was too ill-conditioned and held the
    /// previous `q_d`.
    pub translation_held: bool,
}

impl DqPoseFilter {
    /// Starts from the identity guess (zero rotation, zero translation) with
    /// zero accumulated information.
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "pose forgetting factor must be ≥ 1, got {lambda}"
            )));
        }
        Ok(DqPoseFilter {
            info_r: Matrix4::zeros(),
            cross: Matrix4::zeros(),
            q_r: Vector4::new(1.0, 0.0, 0.0, 0.0),
            q_d: Vector4::zeros(),
            lambda,
            updates: 0,
            tie_detected: false,
            translation_held: false,
        })
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Current pose estimate; unit by construction (eigenvector rotation,
    /// orthogonality-constrained translation).
    pub fn estimate(&self) -> UnitDualQuat {
        UnitDualQuat::new_unchecked(DualQuat::new(
            Quat::from_vector(&self.q_r),
            Quat::from_vector(&self.q_d),
        ))
    }

    /// Relative gap `(λ₂ − λ₁)/λ₂` between the two smallest eigenvalues of
    /// the accumulated rotation information; near 1 once the rotation is well
    /// determined, 0 before any informative data or while the minimum
    /// eigenvalue is degenerate (λ₂ itself at roundoff level counts as zero).
    pub fn rotation_eigengap(&self) -> f64 {
        let Ok(eig) = symmetric_eigen(&to_dmatrix(&self.info_r)) else {
            return 0.0;
        };
        let l0 = eig.eigenvalues[0];
        let l1 = eig.eigenvalues[1];
        let lmax = eig.eigenvalues[3];
        if l1 <= 1e-9 * lmax.max(0.0) || l1 <= 0.0 {
            return 0.0;
        }
        ((l1 - l0) / l1).clamp(0.0, 1.0)
    }

    /// Folds in one twist-pair observation with per-block residual covariance
    /// `r` (rotation rows; the same weight is applied to the accumulated
    /// translation rows).
    pub fn update(&mut self, obs: &PoseObservation, r: &Matrix4<f64>) -> Result<()> {
        let r_inv = r.try_inverse().ok_or(Error::Singular {
            context: "pose observation covariance",
        })?;
        let prev_info = self.info_r;
        let inv_lambda = 1.0 / self.lambda;
        self.info_r = self.info_r * inv_lambda + obs.h_omega.transpose() * r_inv * obs.h_omega;
        self.cross = self.cross * inv_lambda - obs.h_omega.transpose() * r_inv * obs.h_v;
        self.updates += 1;

        self.solve_rotation(&prev_info)?;
        self.solve_translation();
        Ok(())
    }

    fn solve_rotation(&mut self, prev_info: &Matrix4<f64>) -> Result<()> {
        let eig = symmetric_eigen(&to_dmatrix(&self.info_r))?;
        let lam = &eig.eigenvalues;
        let scale = lam[3].abs().max(1e-300);
        let mult = (0..4)
            .take_while(|&k| (lam[k] - lam[0]) <= EIGEN_MULT_TOL * scale)
            .count();
        self.tie_detected = mult > 1;

        let new_q = if mult == 1 {
            Vector4::from_iterator(eig.eigenvectors.column(0).iter().copied())
        } else {
            // Minimize ‖q − q_prev‖ in the previous-information metric over
            // the tied eigenspace, then renormalize.
            let v = eig.eigenvectors.columns(0, mult).into_owned();
            let w = to_dmatrix(prev_info);
            let vtwv = v.transpose() * &w * &v;
            let vtwq = v.transpose() * &w * DVector::from_iterator(4, self.q_r.iter().copied());
            let c = match solve_checked(&vtwv, &vtwq, "eigenspace tie-break") {
                Ok(c) => c,
                // No usable previous information: plain projection.
                Err(_) => v.transpose() * DVector::from_iterator(4, self.q_r.iter().copied()),
            };
            let mut q = &v * c;
            let norm = q.norm();
            if norm < 1e-12 {
                q = v.column(0).into_owned();
            } else {
                q /= norm;
            }
            Vector4::from_iterator(q.iter().copied())
        };
        // Canonical sign q₀ ≥ 0.
        self.q_r = if new_q[0] < 0.0 { -new_q } else { new_q };
        Ok(())
    }

    fn solve_translation(&mut self) {
        // Bordered KKT system [[P⁻¹, q_r], [q_rᵀ, 0]] [q_d; μ] = [S q_r; 0],
        // solved with P⁻¹ and S rescaled to unit magnitude so the border stays
        // well conditioned however much information has accumulated (q_d is
        // invariant under that common rescaling).
        let scale = self.info_r.amax().max(1e-300);
        let mut a = DMatrix::zeros(5, 5);
        for i in 0..4 {
            for j in 0..4 {
                a[(i, j)] = self.info_r[(i, j)] / scale;
            }
            a[(i, 4)] = self.q_r[i];
            a[(4, i)] = self.q_r[i];
        }
        let sq = self.cross * self.q_r / scale;
        let mut b = DVector::zeros(5);
        for i in 0..4 {
            b[i] = sq[i];
        }
        match solve_checked(&a, &b, "bordered translation system") {
            Ok(sol) => {
                let mut q_d = Vector4::new(sol[0], sol[1], sol[2], sol[3]);
                // Remove the residual constraint defect from the linear solve.
                q_d -= self.q_r * self.q_r.dot(&q_d);
                self.q_d = q_d;
                self.translation_held = false;
            }
            Err(_) => {
                self.translation_held = true;
            }
        }
    }
}

fn to_dmatrix(m: &Matrix4<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |i, j| m[(i, j)])
}
