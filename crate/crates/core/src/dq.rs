//! Quaternion and dual-quaternion algebra for SE(3).
//!
//! Provides exact quaternion/dual-quaternion multiplication, the left/right
//! matrix operators that linearize it, the three dual conjugates, conversion
//! between `Pose` and unit dual quaternions, and the adjoint transformation of
//! twists written entirely in dual-quaternion arithmetic.
//!
//! Quaternions are stored scalar-first, `(q0, q)` with `q ∈ R³`; an 8-vector
//! view of a dual quaternion stacks the real part on top of the dual part.
//! None of the algebra here renormalizes its results: unit-ness of a filter
//! output is a structural property of the estimator and silently fixing it up
//! would hide bugs. Use [`UnitQuat::new_normalize`] /
//! [`UnitDualQuat::new_normalize`] when an explicit projection is wanted.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::linalg::skew;
use crate::se3::{Pose, Twist};

/// Norm tolerance for unit-constraint validation of algebraically constructed values.
pub const UNIT_TOL: f64 = 1e-12;

/// Quaternion with scalar part `s` and vector part `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub s: f64,
    pub v: Vector3<f64>,
}

impl Quat {
    pub const fn new(s: f64, v: Vector3<f64>) -> Self {
        Quat { s, v }
    }

    pub fn identity() -> Self {
        Quat::new(1.0, Vector3::zeros())
    }

    pub fn zero() -> Self {
        Quat::new(0.0, Vector3::zeros())
    }

    /// Pure quaternion `(0, v)`.
    pub fn pure(v: Vector3<f64>) -> Self {
        Quat::new(0.0, v)
    }

    pub fn conjugate(&self) -> Self {
        Quat::new(self.s, -self.v)
    }

    pub fn norm(&self) -> f64 {
        (self.s * self.s + self.v.norm_squared()).sqrt()
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.s * other.s + self.v.dot(&other.v)
    }

    pub fn scale(&self, k: f64) -> Self {
        Quat::new(self.s * k, self.v * k)
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.s, self.v.x, self.v.y, self.v.z)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Quat::new(v[0], Vector3::new(v[1], v[2], v[3]))
    }

    /// Left-multiplication operator: `p.plus_op() * q.as_vector()` equals `(p ⊙ q)`.
    pub fn plus_op(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m[(0, 0)] = self.s;
        m.fixed_view_mut::<1, 3>(0, 1)
            .copy_from(&(-self.v.transpose()));
        m.fixed_view_mut::<3, 1>(1, 0).copy_from(&self.v);
        m.fixed_view_mut::<3, 3>(1, 1)
            .copy_from(&(skew(&self.v) + Matrix3::identity() * self.s));
        m
    }

    /// Right-multiplication operator: `q.minus_op() * p.as_vector()` equals `(p ⊙ q)`.
    pub fn minus_op(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m[(0, 0)] = self.s;
        m.fixed_view_mut::<1, 3>(0, 1)
            .copy_from(&(-self.v.transpose()));
        m.fixed_view_mut::<3, 1>(1, 0).copy_from(&self.v);
        m.fixed_view_mut::<3, 3>(1, 1)
            .copy_from(&(-skew(&self.v) + Matrix3::identity() * self.s));
        m
    }
}

impl std::ops::Mul for Quat {
    type Output = Quat;
    /// Hamilton product `p ⊙ q`.
    fn mul(self, q: Quat) -> Quat {
        Quat::new(
            self.s * q.s - self.v.dot(&q.v),
            self.s * q.v + q.s * self.v + self.v.cross(&q.v),
        )
    }
}

impl std::ops::Add for Quat {
    type Output = Quat;
    fn add(self, q: Quat) -> Quat {
        Quat::new(self.s + q.s, self.v + q.v)
    }
}

impl std::ops::Sub for Quat {
    type Output = Quat;
    fn sub(self, q: Quat) -> Quat {
        Quat::new(self.s - q.s, self.v - q.v)
    }
}

impl std::ops::Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.s, -self.v)
    }
}

/// Unit quaternion representing a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat(Quat);

impl UnitQuat {
    pub fn try_new(q: Quat) -> Result<Self> {
        let dev = (q.norm() - 1.0).abs();
        if dev > UNIT_TOL {
            return Err(Error::ConstraintViolation {
                what: "unit quaternion norm",
                deviation: dev,
                tol: UNIT_TOL,
            });
        }
        Ok(UnitQuat(q))
    }

    pub fn new_normalize(q: Quat) -> Self {
        UnitQuat(q.scale(1.0 / q.norm()))
    }

    pub fn new_unchecked(q: Quat) -> Self {
        UnitQuat(q)
    }

    pub fn identity() -> Self {
        UnitQuat(Quat::identity())
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let half = 0.5 * angle;
        UnitQuat(Quat::new(half.cos(), axis.normalize() * half.sin()))
    }

    pub fn inner(&self) -> &Quat {
        &self.0
    }

    /// Representative with non-negative scalar part (removes the double cover).
    pub fn canonical(&self) -> Self {
        if self.0.s < 0.0 {
            UnitQuat(-self.0)
        } else {
            *self
        }
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let q0 = self.0.s;
        let q = self.0.v;
        Matrix3::identity() + 2.0 * q0 * skew(&q) + 2.0 * skew(&q) * skew(&q)
    }

    /// Robust rotation-matrix to quaternion conversion (largest-pivot branch),
    /// canonicalized to `q0 ≥ 0`.
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> Self {
        let trace = r.trace();
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                Vector3::new(
                    (r[(2, 1)] - r[(1, 2)]) / s,
                    (r[(0, 2)] - r[(2, 0)]) / s,
                    (r[(1, 0)] - r[(0, 1)]) / s,
                ),
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                Vector3::new(
                    0.25 * s,
                    (r[(0, 1)] + r[(1, 0)]) / s,
                    (r[(0, 2)] + r[(2, 0)]) / s,
                ),
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                Vector3::new(
                    (r[(0, 1)] + r[(1, 0)]) / s,
                    0.25 * s,
                    (r[(1, 2)] + r[(2, 1)]) / s,
                ),
            )
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                Vector3::new(
                    (r[(0, 2)] + r[(2, 0)]) / s,
                    (r[(1, 2)] + r[(2, 1)]) / s,
                    0.25 * s,
                ),
            )
        };
        UnitQuat::new_normalize(q).canonical()
    }

    /// Rotates a point: `q ⊙ (0, b) ⊙ q*`.
    pub fn rotate(&self, b: &Vector3<f64>) -> Vector3<f64> {
        (self.0 * Quat::pure(*b) * self.0.conjugate()).v
    }
}

/// Dual quaternion `real + ε dual`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuat {
    pub real: Quat,
    pub dual: Quat,
}

impl DualQuat {
    pub const fn new(real: Quat, dual: Quat) -> Self {
        DualQuat { real, dual }
    }

    pub fn identity() -> Self {
        DualQuat::new(Quat::identity(), Quat::zero())
    }

    /// First conjugate: `p - εq` (dual-number conjugation).
    pub fn conj_dual(&self) -> Self {
        DualQuat::new(self.real, -self.dual)
    }

    /// Second conjugate: `p* + εq*` (componentwise quaternion conjugation).
    pub fn conj_quat(&self) -> Self {
        DualQuat::new(self.real.conjugate(), self.dual.conjugate())
    }

    /// Third conjugate: `p* - εq*` (both of the above).
    pub fn conj_both(&self) -> Self {
        DualQuat::new(self.real.conjugate(), -self.dual.conjugate())
    }

    pub fn as_vector(&self) -> SVector<f64, 8> {
        let mut v = SVector::<f64, 8>::zeros();
        v.fixed_rows_mut::<4>(0).copy_from(&self.real.as_vector());
        v.fixed_rows_mut::<4>(4).copy_from(&self.dual.as_vector());
        v
    }

    pub fn from_vector(v: &SVector<f64, 8>) -> Self {
        DualQuat::new(
            Quat::from_vector(&v.fixed_rows::<4>(0).into()),
            Quat::from_vector(&v.fixed_rows::<4>(4).into()),
        )
    }

    /// 8×8 left-multiplication operator `[[p⁺, 0], [q⁺, p⁺]]`.
    pub fn plus_op(&self) -> SMatrix<f64, 8, 8> {
        let mut m = SMatrix::<f64, 8, 8>::zeros();
        let rp = self.real.plus_op();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&rp);
        m.fixed_view_mut::<4, 4>(4, 4).copy_from(&rp);
        m.fixed_view_mut::<4, 4>(4, 0)
            .copy_from(&self.dual.plus_op());
        m
    }

    /// 8×8 right-multiplication operator `[[p⁻, 0], [q⁻, p⁻]]`.
    pub fn minus_op(&self) -> SMatrix<f64, 8, 8> {
        let mut m = SMatrix::<f64, 8, 8>::zeros();
        let rm = self.real.minus_op();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&rm);
        m.fixed_view_mut::<4, 4>(4, 4).copy_from(&rm);
        m.fixed_view_mut::<4, 4>(4, 0)
            .copy_from(&self.dual.minus_op());
        m
    }

    /// Deviation from the unit constraints `(‖p‖-1, p·q)`.
    pub fn unit_defect(&self) -> f64 {
        (self.real.norm() - 1.0)
            .abs()
            .max(self.real.dot(&self.dual).abs())
    }
}

impl std::ops::Mul for DualQuat {
    type Output = DualQuat;
    /// Dual-quaternion product `x₁ ⊗ x₂`.
    fn mul(self, x2: DualQuat) -> DualQuat {
        DualQuat::new(
            self.real * x2.real,
            self.real * x2.dual + self.dual * x2.real,
        )
    }
}

/// Unit dual quaternion representing a rigid transformation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitDualQuat(DualQuat);

impl UnitDualQuat {
    pub fn try_new(x: DualQuat) -> Result<Self> {
        let dev = x.unit_defect();
        if dev > UNIT_TOL {
            return Err(Error::ConstraintViolation {
                what: "unit dual quaternion",
                deviation: dev,
                tol: UNIT_TOL,
            });
        }
        Ok(UnitDualQuat(x))
    }

    pub fn new_unchecked(x: DualQuat) -> Self {
        UnitDualQuat(x)
    }

    /// Projects onto the unit manifold: normalizes the real part and removes
    /// the dual component parallel to it.
    pub fn new_normalize(x: DualQuat) -> Self {
        let n = x.real.norm();
        let real = x.real.scale(1.0 / n);
        let dual = x.dual.scale(1.0 / n);
        let dual = dual - real.scale(real.dot(&dual));
        UnitDualQuat(DualQuat::new(real, dual))
    }

    pub fn identity() -> Self {
        UnitDualQuat(DualQuat::identity())
    }

    pub fn inner(&self) -> &DualQuat {
        &self.0
    }

    /// Product of unit dual quaternions, unit by construction up to roundoff.
    /// Roundoff drift is ~1e-13 over a thousand compositions; no implicit
    /// renormalization is performed.
    pub fn compose(&self, other: &UnitDualQuat) -> UnitDualQuat {
        UnitDualQuat(self.0 * other.0)
    }

    /// Rotation part with `q0 ≥ 0`, and the matching dual part.
    pub fn canonical(&self) -> Self {
        if self.0.real.s < 0.0 {
            UnitDualQuat(DualQuat::new(-self.0.real, -self.0.dual))
        } else {
            *self
        }
    }

    /// Converts a pose `(R, t)` into `q_r + ε (t̃ ⊙ q_r)/2`.
    pub fn from_pose(g: &Pose) -> Self {
        let qr = UnitQuat::from_rotation_matrix(&g.rot);
        let qd = (Quat::pure(g.trans) * *qr.inner()).scale(0.5);
        UnitDualQuat(DualQuat::new(*qr.inner(), qd))
    }

    /// Recovers the pose; the rotation sign is canonicalized to `q0 ≥ 0`.
    pub fn to_pose(&self) -> Pose {
        let c = self.canonical();
        let qr = UnitQuat::new_unchecked(c.0.real);
        // t̃ = 2 q_d ⊙ q_r*
        let t = (c.0.dual * c.0.real.conjugate()).scale(2.0);
        Pose {
            rot: qr.to_rotation_matrix(),
            trans: t.v,
        }
    }

    /// Rigid transformation of a point: `x ⊗ (1 + ε b̃) ⊗ x³*`.
    pub fn transform_point(&self, b: &Vector3<f64>) -> Vector3<f64> {
        let bh = DualQuat::new(Quat::identity(), Quat::pure(*b));
        (self.0 * bh * self.0.conj_both()).dual.v
    }

    /// Adjoint action on a twist: `ξ̂' = x ⊗ ξ̂ ⊗ x²*` with `ξ̂ = ω̃ + ε ṽ`.
    pub fn transform_twist(&self, xi: &Twist) -> Twist {
        let xih = DualQuat::new(Quat::pure(xi.omega), Quat::pure(xi.vel));
        let out = self.0 * xih * self.0.conj_quat();
        Twist {
            omega: out.real.v,
            vel: out.dual.v,
        }
    }
}

/// Validating wrappers for operations whose contracts require unit input.
pub fn point_transform(x: &DualQuat, b: &Vector3<f64>) -> Result<Vector3<f64>> {
    Ok(UnitDualQuat::try_new(*x)?.transform_point(b))
}

pub fn twist_adjoint(x: &DualQuat, xi: &Twist) -> Result<Twist> {
    Ok(UnitDualQuat::try_new(*x)?.transform_twist(xi))
}
