//! Deterministic random generators shared by unit, property and integration
//! tests. Not part of the stable API.
#![doc(hidden)]

use nalgebra::Vector3;
use rand::Rng;

use crate::dq::{Quat, UnitQuat};
use crate::se3::Pose;

pub fn random_vec3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.random::<f64>() * 2.0 - 1.0,
        rng.random::<f64>() * 2.0 - 1.0,
        rng.random::<f64>() * 2.0 - 1.0,
    )
}

/// Uniformly distributed unit quaternion (via normalized Gaussian 4-vector).
pub fn random_unit_quat<R: Rng>(rng: &mut R) -> UnitQuat {
    loop {
        let q = Quat::new(rng.random::<f64>() * 2.0 - 1.0, random_vec3(rng));
        if q.norm() > 1e-3 {
            return UnitQuat::new_normalize(q);
        }
    }
}

pub fn random_quat<R: Rng>(rng: &mut R) -> Quat {
    Quat::new(rng.random::<f64>() * 2.0 - 1.0, random_vec3(rng))
}

pub fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let q = random_unit_quat(rng);
    Pose {
        rot: q.to_rotation_matrix(),
        trans: random_vec3(rng) * 1.5,
    }
}
