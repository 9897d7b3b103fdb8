//! Linear pseudo-observation builders for the identification problem.
//!
//! Every estimator in this crate consumes the same shape of data: a triple
//! `(H, y, R)` with `y = H x` at the true unknown `x`. This module constructs
//! those triples from body-fixed measurements:
//!
//! * relative pose between two sensor frames, from twist pairs, with the
//!   unknown being the stacked dual quaternion `(q_r, q_d)` and `y = 0`;
//! * body-fixed angular acceleration, by central differencing of `ω` plus a
//!   pseudo-observation from accelerometer pairs across an edge;
//! * mass center, inertia tensor and mass individually, and the combined
//!   `8×10` model over `(p_c, I^S, 1/m)` used at runtime;
//! * the coordinate-change transform families (rotation, inertia
//!   conjugation, homogeneous point, transposed adjoint) that let the
//!   consensus layer average these quantities across frames.
//!
//! Observation covariances are propagated from the configured measurement
//! noise and, where available, the current estimate covariance (see
//! [`crate::filter::covariance_propagate`]).

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix4, Matrix6, SMatrix, Vector3, Vector4};

use crate::dq::DualQuat;
use crate::error::{Error, Result};
use crate::filter::{covariance_propagate, MatrixFn};
use crate::linalg::{asymmetry, skew, symmetric_eigen, symmetrize};
use crate::se3::{Pose, Twist, Wrench};

/// Force magnitude below which `F⊥` is undefined and force-dependent rows
/// are dropped rather than regularized.
pub const EPS_FORCE: f64 = 1e-6;

/// Floor added to observation covariances so they stay invertible and keep
/// the information update well conditioned at zero configured noise.
const R_FLOOR: f64 = 1e-8;

/// A linear observation `y = H x` with residual covariance `R`.
#[derive(Debug, Clone)]
pub struct LinearObservation {
    pub h: DMatrix<f64>,
    pub y: DVector<f64>,
    pub r: DMatrix<f64>,
}

impl LinearObservation {
    pub fn new(h: DMatrix<f64>, y: DVector<f64>, r: DMatrix<f64>) -> Result<Self> {
        let obs = LinearObservation { h, y, r };
        obs.validate()?;
        Ok(obs)
    }

    pub fn rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn unknowns(&self) -> usize {
        self.h.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.h.nrows();
        if self.y.len() != rows || self.r.nrows() != rows || self.r.ncols() != rows {
            return Err(Error::Dimension {
                context: "LinearObservation",
                expected: format!("y: {rows}, R: {rows}x{rows}"),
                got: format!(
                    "y: {}, R: {}x{}",
                    self.y.len(),
                    self.r.nrows(),
                    self.r.ncols()
                ),
            });
        }
        let scale = self.r.amax().max(1.0);
        let asym = asymmetry(&self.r);
        if asym > 1e-10 * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let eig = symmetric_eigen(&self.r)?;
        if eig.eigenvalues[0] < -1e-10 * scale {
            return Err(Error::NotPositiveDefinite {
                context: "observation covariance",
            });
        }
        Ok(())
    }
}

/// Unknown vector of the combined dynamic model: mass center, inertia
/// symmetric-vector `(Ixx, Iyy, Izz, Ixy, Ixz, Iyz)` and inverse mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicUnknowns {
    pub pc: Vector3<f64>,
    pub inertia: SMatrix<f64, 6, 1>,
    pub inv_mass: f64,
}

impl DynamicUnknowns {
    pub const DIM: usize = 10;

    pub fn new(pc: Vector3<f64>, inertia_symvec: [f64; 6], inv_mass: f64) -> Self {
        DynamicUnknowns {
            pc,
            inertia: SMatrix::from_column_slice(&inertia_symvec),
            inv_mass,
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(Self::DIM);
        v.fixed_rows_mut::<3>(0).copy_from(&self.pc);
        v.fixed_rows_mut::<6>(3).copy_from(&self.inertia);
        v[9] = self.inv_mass;
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() != Self::DIM {
            return Err(Error::Dimension {
                context: "DynamicUnknowns",
                expected: Self::DIM.to_string(),
                got: v.len().to_string(),
            });
        }
        Ok(DynamicUnknowns {
            pc: v.fixed_rows::<3>(0).into(),
            inertia: v.fixed_rows::<6>(3).into(),
            inv_mass: v[9],
        })
    }

    pub fn mass(&self) -> f64 {
        1.0 / self.inv_mass
    }

    /// First-order variance of `m = 1/β` given the variance of `β`:
    /// `var(m) ≈ var(β) / β⁴`.
    pub fn mass_variance(&self, inv_mass_variance: f64) -> f64 {
        inv_mass_variance / self.inv_mass.powi(4)
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        let s = &self.inertia;
        Matrix3::new(s[0], s[3], s[4], s[3], s[1], s[5], s[4], s[5], s[2])
    }
}

/// `H_q(a, b) = [[0, (a−b)ᵀ], [b−a, (a+b)×]]`, the 4×4 block such that
/// `H_q(a, b) q̃ = ã ⊙ q̃ − q̃ ⊙ b̃` for pure quaternions `ã, b̃`.
pub fn hq(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    let d = a - b;
    m.fixed_view_mut::<1, 3>(0, 1).copy_from(&d.transpose());
    m.fixed_view_mut::<3, 1>(1, 0).copy_from(&(-d));
    m.fixed_view_mut::<3, 3>(1, 1).copy_from(&skew(&(a + b)));
    m
}

/// Pose pseudo-observation from one pair of simultaneous twist measurements.
/// The stacked 8×8 matrix annihilates the true `(q_r, q_d)` of `g_ji` when
/// both twists are noise-free and `ξ_j = Ad(g_ji) ξ_i`.
#[derive(Debug, Clone, Copy)]
pub struct PoseObservation {
    pub h_omega: Matrix4<f64>,
    pub h_v: Matrix4<f64>,
}

pub fn build_pose_observation(xi_i: &Twist, xi_j: &Twist) -> PoseObservation {
    PoseObservation {
        h_omega: hq(&xi_i.omega, &xi_j.omega),
        h_v: hq(&xi_i.vel, &xi_j.vel),
    }
}

/// 4×6 Jacobian of `(a, b) ↦ H_q(a, b) q` for fixed `q`, split into the
/// `a`-block and `b`-block.
fn hq_noise_jacobian(q: &Vector4<f64>) -> (SMatrix<f64, 4, 3>, SMatrix<f64, 4, 3>) {
    let q0 = q[0];
    let qv = Vector3::new(q[1], q[2], q[3]);
    let mut ga = SMatrix::<f64, 4, 3>::zeros();
    ga.fixed_view_mut::<1, 3>(0, 0).copy_from(&qv.transpose());
    ga.fixed_view_mut::<3, 3>(1, 0)
        .copy_from(&(-Matrix3::identity() * q0 - skew(&qv)));
    let mut gb = SMatrix::<f64, 4, 3>::zeros();
    gb.fixed_view_mut::<1, 3>(0, 0)
        .copy_from(&(-qv.transpose()));
    gb.fixed_view_mut::<3, 3>(1, 0)
        .copy_from(&(Matrix3::identity() * q0 - skew(&qv)));
    (ga, gb)
}

impl PoseObservation {
    /// Stacked `[[H_ω, 0], [H_v, H_ω]]`.
    pub fn stacked_h(&self) -> SMatrix<f64, 8, 8> {
        let mut h = SMatrix::<f64, 8, 8>::zeros();
        h.fixed_view_mut::<4, 4>(0, 0).copy_from(&self.h_omega);
        h.fixed_view_mut::<4, 4>(4, 4).copy_from(&self.h_omega);
        h.fixed_view_mut::<4, 4>(4, 0).copy_from(&self.h_v);
        h
    }

    /// Full `8×8` observation with `y = 0` and the residual covariance
    /// propagated from the twist noise at the current pose estimate
    /// (optionally including the estimate's own uncertainty).
    ///
    /// The exact covariance is rank-deficient along the constraint
    /// directions; a small floor keeps it usable as a weight.
    pub fn to_linear(
        &self,
        delta: f64,
        estimate: &DualQuat,
        sigma_x: Option<&DMatrix<f64>>,
    ) -> Result<LinearObservation> {
        let h = DMatrix::from_fn(8, 8, |i, j| self.stacked_h()[(i, j)]);
        let y = DVector::zeros(8);

        // Residual noise map: rows 0..4 get H_q(nω_i, nω_j) q_r, rows 4..8 get
        // H_q(nω_i, nω_j) q_d + H_q(nv_i, nv_j) q_r; the map is linear in the
        // stacked estimate (q_r, q_d).
        let g = MatrixFn {
            rows: 8,
            noise_dim: 12,
            state_dim: 8,
            eval: &|x: &DVector<f64>| {
                let qr = Vector4::new(x[0], x[1], x[2], x[3]);
                let qd = Vector4::new(x[4], x[5], x[6], x[7]);
                let (ga_r, gb_r) = hq_noise_jacobian(&qr);
                let (ga_d, gb_d) = hq_noise_jacobian(&qd);
                let mut g = DMatrix::zeros(8, 12);
                g.fixed_view_mut::<4, 3>(0, 0).copy_from(&ga_r);
                g.fixed_view_mut::<4, 3>(0, 3).copy_from(&gb_r);
                g.fixed_view_mut::<4, 3>(4, 0).copy_from(&ga_d);
                g.fixed_view_mut::<4, 3>(4, 3).copy_from(&gb_d);
                g.fixed_view_mut::<4, 3>(4, 6).copy_from(&ga_r);
                g.fixed_view_mut::<4, 3>(4, 9).copy_from(&gb_r);
                g
            },
        };
        let x8 = DVector::from_iterator(8, estimate.as_vector().iter().copied());
        let sigma_b = DMatrix::identity(12, 12) * delta * delta;
        let zero;
        let sx = match sigma_x {
            Some(s) => s,
            None => {
                zero = DMatrix::zeros(8, 8);
                &zero
            }
        };
        let mut r = covariance_propagate(&g, &x8, &sigma_b, sx, &DMatrix::zeros(8, 8))?;
        for i in 0..8 {
            r[(i, i)] += R_FLOOR.max(delta * delta * 1e-9);
        }
        LinearObservation::new(h, y, r)
    }
}

/// Central-difference angular acceleration `(ω(t+Δt) − ω(t−Δt)) / 2Δt`.
pub fn estimate_alpha(
    omega_prev: &Vector3<f64>,
    omega_next: &Vector3<f64>,
    dt: f64,
) -> Result<Vector3<f64>> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "central difference step must be positive, got {dt}"
        )));
    }
    Ok((omega_next - omega_prev) / (2.0 * dt))
}

/// Pseudo-observation for `α_i` from an accelerometer pair across one edge:
/// `H_α = t̂_ji R_ji`, `y = ā_j − R_ji ā_i`. `informative` is false when the
/// edge has no lever arm (`t_ji = 0`), in which case `H` is zero and the
/// observation carries no information.
#[derive(Debug, Clone, Copy)]
pub struct AlphaObservation {
    pub h: Matrix3<f64>,
    pub y: Vector3<f64>,
    pub informative: bool,
}

pub fn build_alpha_observation(
    g_ji: &Pose,
    abar_i: &Vector3<f64>,
    abar_j: &Vector3<f64>,
) -> AlphaObservation {
    let h = skew(&g_ji.trans) * g_ji.rot;
    AlphaObservation {
        h,
        y: abar_j - g_ji.rot * abar_i,
        informative: g_ji.trans.norm() > 1e-12,
    }
}

/// Fused angular-acceleration estimate for one robot at one instant.
#[derive(Debug, Clone, Copy)]
pub struct AlphaEstimate {
    pub alpha: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Single weighted-least-squares fusion of the robot's own central
/// difference, its neighbours' central differences mapped through
/// `α_j = R_ji α_i`, and the accelerometer-pair observations. The relative
/// weighting of difference versus accelerometer terms is `4Δt²` and does not
/// depend on the noise level; the returned covariance does.
pub fn fuse_alpha(
    own_cd: &Vector3<f64>,
    neighbor_cd: &[(Matrix3<f64>, Vector3<f64>)],
    accel_obs: &[AlphaObservation],
    dt: f64,
    delta: f64,
) -> Result<AlphaEstimate> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "fusion step must be positive, got {dt}"
        )));
    }
    let w_cd = 4.0 * dt * dt; // (1/σ_cd²) / (1/2δ²)
    let mut a = Matrix3::identity() * w_cd;
    let mut b = own_cd * w_cd;
    for (r_ji, alpha_j) in neighbor_cd {
        // ‖R_ji α − α_j‖² has the same weight as the own difference.
        a += Matrix3::identity() * w_cd;
        b += r_ji.transpose() * alpha_j * w_cd;
    }
    for obs in accel_obs {
        if !obs.informative {
            continue;
        }
        a += obs.h.transpose() * obs.h;
        b += obs.h.transpose() * obs.y;
    }
    let a_inv = a.try_inverse().ok_or(Error::Singular {
        context: "alpha fusion",
    })?;
    Ok(AlphaEstimate {
        alpha: a_inv * b,
        cov: a_inv * (2.0 * delta * delta),
    })
}

/// Deterministic row-orthonormal `2×3` basis of the plane orthogonal to `f`,
/// built from the Householder reflector that sends `f/‖f‖` onto the
/// largest-magnitude coordinate axis.
pub fn perp_basis(f: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
    let norm = f.norm();
    if norm <= EPS_FORCE {
        return Err(Error::DegenerateForce {
            magnitude: norm,
            threshold: EPS_FORCE,
        });
    }
    let u = f / norm;
    let axis = u.iamax();
    let sign = if u[axis] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = u;
    w[axis] += sign;
    let w = w / w.norm();
    let reflector = Matrix3::identity() - 2.0 * w * w.transpose();
    // Rows of the reflector other than `axis` are orthonormal and ⊥ u.
    let mut out = Matrix2x3::zeros();
    let mut row = 0;
    for k in 0..3 {
        if k == axis {
            continue;
        }
        out.set_row(row, &reflector.row(k));
        row += 1;
    }
    Ok(out)
}

/// Mass-center observation: `F⊥(α× + (ω×)²) p_c = −F⊥(ω×v + ā)`.
pub fn build_pc_observation(
    force: &Vector3<f64>,
    alpha: &Vector3<f64>,
    omega: &Vector3<f64>,
    vel: &Vector3<f64>,
    abar: &Vector3<f64>,
    delta: f64,
) -> Result<LinearObservation> {
    let fperp = perp_basis(force)?;
    let motion = skew(alpha) + skew(omega) * skew(omega);
    let h = fperp * motion;
    let y = -(fperp * (omega.cross(vel) + abar));
    let r = DMatrix::identity(2, 2) * (delta * delta).max(R_FLOOR);
    LinearObservation::new(
        DMatrix::from_fn(2, 3, |i, j| h[(i, j)]),
        DVector::from_iterator(2, y.iter().copied()),
        r,
    )
}

/// The 3×6 inertia regressor `H_I(ω, α)` with
/// `H_I(ω, α) · I^S = I α + ω × (I ω)` for every symmetric `I`.
pub fn build_inertia_regressor(omega: &Vector3<f64>, alpha: &Vector3<f64>) -> SMatrix<f64, 3, 6> {
    let (w1, w2, w3) = (omega.x, omega.y, omega.z);
    let (a1, a2, a3) = (alpha.x, alpha.y, alpha.z);
    SMatrix::<f64, 3, 6>::from_row_slice(&[
        a1,
        -w2 * w3,
        w2 * w3,
        a2 - w1 * w3,
        a3 + w1 * w2,
        w2 * w2 - w3 * w3,
        w1 * w3,
        a2,
        -w1 * w3,
        a1 + w2 * w3,
        w3 * w3 - w1 * w1,
        a3 - w1 * w2,
        -w1 * w2,
        w1 * w2,
        a3,
        w1 * w1 - w2 * w2,
        a1 - w2 * w3,
        a2 + w1 * w3,
    ])
}

/// Mass observation `H_m · m = F` with
/// `H_m = ā + α×p_c + ω×(ω×p_c + v)`. Returns `None` when the regressor is
/// too small to carry information (free fall / no motion).
pub fn build_mass_observation(
    pc: &Vector3<f64>,
    alpha: &Vector3<f64>,
    omega: &Vector3<f64>,
    vel: &Vector3<f64>,
    abar: &Vector3<f64>,
    force: &Vector3<f64>,
    delta: f64,
) -> Result<Option<LinearObservation>> {
    let h = abar + alpha.cross(pc) + omega.cross(&(omega.cross(pc) + vel));
    if h.norm() < 1e-9 {
        return Ok(None);
    }
    let r = DMatrix::identity(3, 3) * (delta * delta).max(R_FLOOR);
    Ok(Some(LinearObservation::new(
        DMatrix::from_fn(3, 1, |i, _| h[i]),
        DVector::from_iterator(3, force.iter().copied()),
        r,
    )?))
}

/// Measurement bundle for the combined model: the robot's own kinematic
/// channels plus the consensus-recovered total wrench at its frame.
#[derive(Debug, Clone, Copy)]
pub struct CombinedInputs {
    pub omega: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub abar: Vector3<f64>,
    pub alpha: Vector3<f64>,
    pub total_force: Vector3<f64>,
    pub total_torque: Vector3<f64>,
}

/// Noise description for the combined model's covariance propagation.
#[derive(Debug, Clone)]
pub struct CombinedNoise {
    /// Std-dev of each raw measurement channel (`ω`, `v`, `ā`).
    pub delta: f64,
    /// Covariance of the fused angular-acceleration estimate.
    pub alpha_cov: Matrix3<f64>,
    /// Covariance of the stacked total wrench `[T; F]` after consensus.
    pub wrench_cov: Matrix6<f64>,
}

impl CombinedNoise {
    /// Treats every channel as exact (useful for tests on noiseless data).
    pub fn exact() -> Self {
        CombinedNoise {
            delta: 0.0,
            alpha_cov: Matrix3::zeros(),
            wrench_cov: Matrix6::zeros(),
        }
    }
}

/// The combined observation over `(p_c, I^S, 1/m)`: 8×10 when the total
/// force is non-degenerate, 6×10 otherwise (the two `F⊥` rows are dropped).
#[derive(Debug, Clone)]
pub struct CombinedObservation {
    pub obs: LinearObservation,
    pub force_degenerate: bool,
}

/// Stacked noise layout used by the combined-model covariance:
/// `[nω, nv, nā, nα, nT, nF]`.
const COMBINED_NOISE_DIM: usize = 18;

fn combined_noise_map(
    inputs: &CombinedInputs,
    fperp: Option<&Matrix2x3<f64>>,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let pc: Vector3<f64> = x.fixed_rows::<3>(0).into();
    let isym: SMatrix<f64, 6, 1> = x.fixed_rows::<6>(3).into();
    let beta = x[9];
    let omega = &inputs.omega;
    let vel = &inputs.vel;

    let mut g = DMatrix::zeros(8, COMBINED_NOISE_DIM);
    // The product rule on (ω×)² p_c: per noise basis vector e, the first-order
    // term is (e× ω× + ω× e×) p_c.
    let dsq = |e: Vector3<f64>| (skew(&e) * skew(omega) + skew(omega) * skew(&e)) * pc;
    // ∂H_I/∂ω and ∂H_I/∂α act linearly on I^S; build them by differencing the
    // exact regressor (it is quadratic in ω, so central differences are exact).
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = 1.0;

        // nω column k.
        let dh_omega = {
            let hp = build_inertia_regressor(&(omega + e * 0.5), &inputs.alpha);
            let hm = build_inertia_regressor(&(omega - e * 0.5), &inputs.alpha);
            hp - hm
        };
        let torque_rows = dh_omega * isym;
        let lin = dsq(e) + e.cross(vel);
        if let Some(fp) = fperp {
            let top = fp * lin;
            g[(0, k)] = top[0];
            g[(1, k)] = top[1];
        }
        for r in 0..3 {
            g[(2 + r, k)] = torque_rows[r];
            g[(5 + r, k)] = -lin[r];
        }

        // nv column 3+k: ω × e appears in rows 0..2 (via y) and 5..8.
        let wxe = omega.cross(&e);
        if let Some(fp) = fperp {
            let top = fp * wxe;
            g[(0, 3 + k)] = top[0];
            g[(1, 3 + k)] = top[1];
        }
        for r in 0..3 {
            g[(5 + r, 3 + k)] = -wxe[r];
        }

        // nā column 6+k.
        if let Some(fp) = fperp {
            g[(0, 6 + k)] = fp[(0, k)];
            g[(1, 6 + k)] = fp[(1, k)];
        }
        g[(5 + k, 6 + k)] = -1.0;

        // nα column 9+k: e × p_c in the F⊥ rows and force rows, H_I^α e in the
        // torque rows.
        let expc = e.cross(&pc);
        let dh_alpha = {
            let hp = build_inertia_regressor(omega, &(inputs.alpha + e * 0.5));
            let hm = build_inertia_regressor(omega, &(inputs.alpha - e * 0.5));
            hp - hm
        };
        let torque_rows = dh_alpha * isym;
        if let Some(fp) = fperp {
            let top = fp * expc;
            g[(0, 9 + k)] = top[0];
            g[(1, 9 + k)] = top[1];
        }
        for r in 0..3 {
            g[(2 + r, 9 + k)] = torque_rows[r];
            g[(5 + r, 9 + k)] = -expc[r];
        }

        // nT column 12+k: y₂ = T.
        g[(2 + k, 12 + k)] = -1.0;

        // nF column 15+k: −F̂⊥ β e in the top rows (exact), −e × p_c in the
        // torque rows, β e in the force rows.
        if let Some(fp) = fperp {
            g[(0, 15 + k)] = -fp[(0, k)] * beta;
            g[(1, 15 + k)] = -fp[(1, k)] * beta;
        }
        let expc = e.cross(&pc);
        for r in 0..3 {
            g[(2 + r, 15 + k)] = -expc[r];
            g[(5 + r, 15 + k)] = e[r] * beta;
        }
    }
    g
}

/// Builds the combined `(H_D, y_D, R)` observation. `estimate` and `sigma_x`
/// are the current filter state, used only for covariance propagation; pass
/// `sigma_x = None` before the filter holds a usable covariance.
pub fn build_combined_observation(
    inputs: &CombinedInputs,
    noise: &CombinedNoise,
    estimate: &DynamicUnknowns,
    sigma_x: Option<&DMatrix<f64>>,
) -> Result<CombinedObservation> {
    let omega = &inputs.omega;
    let motion = skew(&inputs.alpha) + skew(omega) * skew(omega);
    let h_i = build_inertia_regressor(omega, &inputs.alpha);
    let wxv_abar = omega.cross(&inputs.vel) + inputs.abar;

    let fperp = perp_basis(&inputs.total_force).ok();
    let force_degenerate = fperp.is_none();
    let rows = if force_degenerate { 6 } else { 8 };

    let mut h = DMatrix::zeros(rows, DynamicUnknowns::DIM);
    let mut y = DVector::zeros(rows);
    let mut row = 0;
    if let Some(fp) = &fperp {
        let top = fp * motion;
        let ytop = -(fp * wxv_abar);
        for r in 0..2 {
            for c in 0..3 {
                h[(row + r, c)] = top[(r, c)];
            }
            y[row + r] = ytop[r];
        }
        row += 2;
    }
    // Torque rows: [−F×, H_I, 0] x = T.
    let neg_fx = -skew(&inputs.total_force);
    for r in 0..3 {
        for c in 0..3 {
            h[(row + r, c)] = neg_fx[(r, c)];
        }
        for c in 0..6 {
            h[(row + r, 3 + c)] = h_i[(r, c)];
        }
        y[row + r] = inputs.total_torque[r];
    }
    row += 3;
    // Force rows: [−α× − (ω×)², 0, F] x = ω×v + ā.
    let neg_motion = -motion;
    for r in 0..3 {
        for c in 0..3 {
            h[(row + r, c)] = neg_motion[(r, c)];
        }
        h[(row + r, 9)] = inputs.total_force[r];
        y[row + r] = wxv_abar[r];
    }

    // Covariance via per-channel first-order propagation at the measured
    // values; the noise map is affine in the unknowns, and the estimate
    // uncertainty enters through its linear part.
    let g = MatrixFn {
        rows: 8,
        noise_dim: COMBINED_NOISE_DIM,
        state_dim: DynamicUnknowns::DIM,
        eval: &|x: &DVector<f64>| combined_noise_map(inputs, fperp.as_ref(), x),
    };
    let mut sigma_b = DMatrix::zeros(COMBINED_NOISE_DIM, COMBINED_NOISE_DIM);
    let d2 = noise.delta * noise.delta;
    for k in 0..9 {
        sigma_b[(k, k)] = d2;
    }
    for i in 0..3 {
        for j in 0..3 {
            sigma_b[(9 + i, 9 + j)] = noise.alpha_cov[(i, j)];
        }
    }
    for i in 0..6 {
        for j in 0..6 {
            sigma_b[(12 + i, 12 + j)] = noise.wrench_cov[(i, j)];
        }
    }
    let zero;
    let sx = match sigma_x {
        Some(s) => s,
        None => {
            zero = DMatrix::zeros(DynamicUnknowns::DIM, DynamicUnknowns::DIM);
            &zero
        }
    };
    let r_full = covariance_propagate(
        &g,
        &estimate.to_vector(),
        &sigma_b,
        sx,
        &DMatrix::zeros(8, 8),
    )?;
    // Drop the F⊥ rows when degenerate, matching the H/y assembly above.
    let keep: Vec<usize> = if force_degenerate {
        (2..8).collect()
    } else {
        (0..8).collect()
    };
    let mut r = DMatrix::zeros(rows, rows);
    for (a, &ia) in keep.iter().enumerate() {
        for (b, &ib) in keep.iter().enumerate() {
            r[(a, b)] = r_full[(ia, ib)];
        }
    }
    symmetrize(&mut r);
    let floor = (r.diagonal().max() * 1e-9).max(R_FLOOR);
    for i in 0..rows {
        r[(i, i)] += floor;
    }

    Ok(CombinedObservation {
        obs: LinearObservation::new(h, y, r)?,
        force_degenerate,
    })
}

/// One robot's contribution to the total wrench at frame `i`:
/// `Ad(g_ji)ᵀ w_j` maps the wrench robot `j` applies (expressed in its own
/// frame) into frame `i`. Summation over robots is the consensus layer's job.
pub fn aggregate_wrench_transform(g_ji: &Pose, w_j: &Wrench) -> Wrench {
    g_ji.transform_wrench_transpose(w_j)
}

/// 6×6 matrix acting on inertia symmetric-vectors such that
/// `symvec_conjugation(R) · symvec(S) = symvec(R S Rᵀ)`.
pub fn symvec_conjugation(r: &Matrix3<f64>) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let basis = [(0usize, 0usize), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    for (col, &(i, j)) in basis.iter().enumerate() {
        let mut s = Matrix3::zeros();
        s[(i, j)] = 1.0;
        s[(j, i)] = 1.0;
        let out = r * s * r.transpose();
        m[(0, col)] = out[(0, 0)];
        m[(1, col)] = out[(1, 1)];
        m[(2, col)] = out[(2, 2)];
        m[(3, col)] = out[(0, 1)];
        m[(4, col)] = out[(0, 2)];
        m[(5, col)] = out[(1, 2)];
    }
    m
}

/// Coordinate-change transforms for one edge, all in the "map neighbour `j`'s
/// value into frame `i`" direction expected by the consensus layer
/// (`A_ij` in the cocycle): built from `g_ji`, the pose of frame `i`
/// expressed in frame `j`.
#[derive(Debug, Clone)]
pub struct EdgeTransforms {
    /// Vectors fixed to the body (e.g. `α`): `A_ij = R_ij`.
    pub rotation: Matrix3<f64>,
    /// Inertia symmetric-vectors: conjugation by `R_ij`.
    pub inertia: Matrix6<f64>,
    /// Homogeneous mass-center coordinates: `[[R_ij, t_ij], [0, 1]]`.
    pub pc_homogeneous: Matrix4<f64>,
    /// Wrenches: `A_ij = Ad(g_ji)ᵀ` (wrenches transform contravariantly).
    pub wrench: Matrix6<f64>,
}

pub fn consensus_transforms(g_ji: &Pose) -> EdgeTransforms {
    let g_ij = g_ji.inverse();
    let mut pc_h = Matrix4::identity();
    pc_h.fixed_view_mut::<3, 3>(0, 0).copy_from(&g_ij.rot);
    pc_h.fixed_view_mut::<3, 1>(0, 3).copy_from(&g_ij.trans);
    EdgeTransforms {
        rotation: g_ij.rot,
        inertia: symvec_conjugation(&g_ij.rot),
        pc_homogeneous: pc_h,
        wrench: g_ji.adjoint().transpose(),
    }
}
