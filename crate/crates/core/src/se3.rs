//! Rigid-body poses, twists and wrenches with the 6×6 adjoint maps.
//!
//! Conventions, used consistently across the crate:
//! * `Pose { rot: R, trans: t }` maps coordinates of the source frame into the
//!   target frame: `p_target = R p_source + t`. A variable named `g_ji`
//!   therefore maps frame-`i` coordinates into frame `j`.
//! * A body twist `(ω, v)` attached to frame `A` transforms into frame `B`
//!   (both fixed to the same rigid body) as `ξ_B = Ad(g_BA) ξ_A` with
//!   `Ad(g) = [[R, 0], [t̂ R, R]]`.
//! * Wrenches `(τ, f)` go the opposite way: `w_B = Ad(g_AB)ᵀ w_A`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::linalg::skew;

pub const POSE_TOL: f64 = 1e-10;

/// Element of SE(3): rotation plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

/// Body-fixed velocity pair `(ω, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub vel: Vector3<f64>,
}

/// Torque-force pair `(τ, f)` expressed at a frame origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub torque: Vector3<f64>,
    pub force: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    /// Builds a pose after verifying `RᵀR = I` and `det R = +1`.
    pub fn new(rot: Matrix3<f64>, trans: Vector3<f64>) -> Result<Self> {
        let ortho = (rot.transpose() * rot - Matrix3::identity()).amax();
        if ortho > POSE_TOL {
            return Err(Error::ConstraintViolation {
                what: "rotation orthogonality",
                deviation: ortho,
                tol: POSE_TOL,
            });
        }
        let det_dev = (rot.determinant() - 1.0).abs();
        if det_dev > POSE_TOL {
            return Err(Error::ConstraintViolation {
                what: "rotation determinant",
                deviation: det_dev,
                tol: POSE_TOL,
            });
        }
        Ok(Pose { rot, trans })
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, trans: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .into_inner();
        Pose { rot, trans }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rot.transpose();
        Pose {
            rot: rt,
            trans: -(rt * self.trans),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    /// 6×6 adjoint `[[R, 0], [t̂R, R]]` mapping twists from the source frame
    /// of this pose into its target frame.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rot);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(skew(&self.trans) * self.rot));
        ad
    }

    pub fn transform_twist(&self, xi: &Twist) -> Twist {
        let omega = self.rot * xi.omega;
        Twist {
            omega,
            vel: self.trans.cross(&omega) + self.rot * xi.vel,
        }
    }

    /// `Ad(self)ᵀ w`: maps a wrench expressed in this pose's *target* frame
    /// into its *source* frame.
    pub fn transform_wrench_transpose(&self, w: &Wrench) -> Wrench {
        let rt = self.rot.transpose();
        Wrench {
            torque: rt * w.torque + (skew(&self.trans) * self.rot).transpose() * w.force,
            force: rt * w.force,
        }
    }
}

impl Twist {
    pub fn new(omega: Vector3<f64>, vel: Vector3<f64>) -> Self {
        Twist { omega, vel }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.omega);
        v.fixed_rows_mut::<3>(3).copy_from(&self.vel);
        v
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            omega: v.fixed_rows::<3>(0).into(),
            vel: v.fixed_rows::<3>(3).into(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.omega
            .iter()
            .chain(self.vel.iter())
            .all(|x| x.is_finite())
    }
}

impl Wrench {
    pub fn new(torque: Vector3<f64>, force: Vector3<f64>) -> Self {
        Wrench { torque, force }
    }

    pub fn zero() -> Self {
        Wrench::default()
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.torque);
        v.fixed_rows_mut::<3>(3).copy_from(&self.force);
        v
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Wrench {
            torque: v.fixed_rows::<3>(0).into(),
            force: v.fixed_rows::<3>(3).into(),
        }
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench {
            torque: self.torque + rhs.torque,
            force: self.force + rhs.force,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{random_pose, random_vec3};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn compose_inverse_is_identity() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..50 {
            let g = random_pose(&mut rng);
            let e = g.compose(&g.inverse());
            assert!((e.rot - Matrix3::identity()).amax() < 1e-12);
            assert!(e.trans.norm() < 1e-12);
        }
    }

    #[test]
    fn adjoint_matches_transform_twist() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..50 {
            let g = random_pose(&mut rng);
            let xi = Twist::new(random_vec3(&mut rng), random_vec3(&mut rng));
            let direct = g.transform_twist(&xi).as_vector();
            let via_matrix = g.adjoint() * xi.as_vector();
            assert!((direct - via_matrix).norm() < 1e-12);
        }
    }

    #[test]
    fn wrench_transform_is_adjoint_transpose() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let g = random_pose(&mut rng);
            let w = Wrench::new(random_vec3(&mut rng), random_vec3(&mut rng));
            let direct = g.transform_wrench_transpose(&w).as_vector();
            let via_matrix = g.adjoint().transpose() * w.as_vector();
            assert!((direct - via_matrix).norm() < 1e-12);
        }
    }

    #[test]
    fn twist_wrench_duality_holds() {
        // Power is frame invariant: ⟨w_A, ξ_A⟩ = ⟨Ad(g_AB)ᵀ w_A, ξ_B⟩ with ξ_A = Ad(g_AB) ξ_B.
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..50 {
            let g = random_pose(&mut rng);
            let xi_b = Twist::new(random_vec3(&mut rng), random_vec3(&mut rng));
            let w_a = Wrench::new(random_vec3(&mut rng), random_vec3(&mut rng));
            let xi_a = g.transform_twist(&xi_b);
            let w_b = g.transform_wrench_transpose(&w_a);
            let p1 = w_a.as_vector().dot(&xi_a.as_vector());
            let p2 = w_b.as_vector().dot(&xi_b.as_vector());
            assert!((p1 - p2).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_rotation() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(bad, Vector3::zeros()).is_err());
    }
}
