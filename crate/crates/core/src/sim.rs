//! Ground-truth rigid-body dynamics and noisy body-fixed sensor synthesis.
//!
//! The truth model integrates the standard equations of motion written at the
//! mass center,
//!
//! ```text
//! I ω̇ = T − ω × Iω            v̇ = F/m + Rᵀg − ω × v
//! q̇  = ½ q ⊙ (0, ω)           ṗ  = R v
//! ```
//!
//! with a classical RK4 step and unit-quaternion renormalization once per
//! step. All per-robot readings are then derived exactly from the mass-center
//! state via the constant sensor-frame offsets, so the synthesized
//! measurements satisfy every observation identity used by the estimators up
//! to integrator roundoff.
//!
//! Sensor-frame conventions follow the crate-wide rule: the contact layout
//! stores `g_ci` (sensor frame `i` expressed in the mass-center frame), and
//! the translation of its inverse is exactly the mass center seen from the
//! sensor.
//!
//! `abar` is the proper acceleration paired with the body-fixed velocity
//! derivative, `ā = v̇ − Rᵀg`; an ideal accelerometer at the same point reads
//! `ā + ω × v`, exposed separately as the coordinate acceleration.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dq::{Quat, UnitQuat};
use crate::error::{Error, Result};
use crate::se3::{Pose, Twist, Wrench};

/// Mass, mass center and inertia of the payload, expressed in a body-fixed
/// reference frame: `com` is the mass-center position in that frame and
/// `inertia` is taken about the mass center along the frame's axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertialParams {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

impl InertialParams {
    pub fn new(mass: f64, com: Vector3<f64>, inertia: Matrix3<f64>) -> Result<Self> {
        let p = InertialParams { mass, com, inertia };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mass.is_finite() || self.mass <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mass must be positive and finite, got {}",
                self.mass
            )));
        }
        let asym = (self.inertia - self.inertia.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let eig = self.inertia.symmetric_eigenvalues();
        let mut lam: Vec<f64> = eig.iter().copied().collect();
        lam.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if lam[0] <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                context: "inertia tensor",
            });
        }
        // Principal moments of any rigid body satisfy λ_max ≤ λ_1 + λ_2.
        if lam[2] > lam[0] + lam[1] + 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "inertia principal moments {lam:?} violate the triangle inequality"
            )));
        }
        Ok(())
    }

    /// Inertia symmetric-vector `(Ixx, Iyy, Izz, Ixy, Ixz, Iyz)`.
    pub fn inertia_symvec(&self) -> [f64; 6] {
        inertia_to_symvec(&self.inertia)
    }
}

pub fn inertia_to_symvec(i: &Matrix3<f64>) -> [f64; 6] {
    [
        i[(0, 0)],
        i[(1, 1)],
        i[(2, 2)],
        i[(0, 1)],
        i[(0, 2)],
        i[(1, 2)],
    ]
}

pub fn symvec_to_inertia(s: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(s[0], s[3], s[4], s[3], s[1], s[5], s[4], s[5], s[2])
}

/// Pose and body-fixed twist of the mass-center frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyState {
    /// Attitude, mass-center frame to world.
    pub att: UnitQuat,
    /// Mass-center position in the world frame.
    pub pos: Vector3<f64>,
    /// Body-fixed angular velocity.
    pub omega: Vector3<f64>,
    /// Body-fixed linear velocity of the mass center.
    pub vel: Vector3<f64>,
}

impl RigidBodyState {
    pub fn at_rest() -> Self {
        RigidBodyState {
            att: UnitQuat::identity(),
            pos: Vector3::zeros(),
            omega: Vector3::zeros(),
            vel: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.att.to_rotation_matrix()
    }
}

/// Poses of each sensor frame expressed in the mass-center frame (`g_ci`),
/// fixed for the lifetime of one set of inertial parameters.
#[derive(Debug, Clone)]
pub struct ContactLayout {
    pub poses: Vec<Pose>,
}

impl ContactLayout {
    /// Derives the mass-center-frame layout from poses given in the body
    /// reference frame that `com` is expressed in (the two frames share axes
    /// and differ by the mass-center offset).
    pub fn from_reference(reference_poses: &[Pose], com: &Vector3<f64>) -> Self {
        ContactLayout {
            poses: reference_poses
                .iter()
                .map(|g| Pose {
                    rot: g.rot,
                    trans: g.trans - com,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// True relative pose `g_ji` (maps sensor-`i` coordinates into sensor `j`).
    pub fn relative_pose(&self, j: usize, i: usize) -> Pose {
        self.poses[j].inverse().compose(&self.poses[i])
    }

    /// Mass center seen from sensor `i` (the identification target `p_c^i`).
    pub fn com_in_sensor(&self, i: usize) -> Vector3<f64> {
        self.poses[i].inverse().trans
    }
}

/// Noise-free per-robot kinematic truth at one instant.
#[derive(Debug, Clone, Copy)]
pub struct SensorKinematics {
    pub twist: Twist,
    /// Proper acceleration `v̇ − Rᵀg` at the sensor origin.
    pub abar: Vector3<f64>,
    /// True body-fixed angular acceleration (test oracle; estimators must
    /// reconstruct it from measurements instead).
    pub alpha: Vector3<f64>,
    /// Coordinate acceleration of the sensor origin resolved in the sensor
    /// frame, `v̇ + ω × v` (the point's world acceleration seen body-fixed).
    pub coord_accel: Vector3<f64>,
}

/// One robot's measurement tuple, everything expressed in its sensor frame.
#[derive(Debug, Clone, Copy)]
pub struct SensorReading {
    pub omega: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub abar: Vector3<f64>,
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl SensorReading {
    pub fn is_finite(&self) -> bool {
        [self.omega, self.vel, self.abar, self.force, self.torque]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gaussian measurement-noise model: every channel is perturbed by i.i.d.
/// zero-mean noise with covariance `delta² I`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    pub delta: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(delta: f64, seed: u64) -> Result<Self> {
        if delta < 0.0 || !delta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise delta must be non-negative, got {delta}"
            )));
        }
        Ok(NoiseModel { delta, seed })
    }

    pub fn sampler(&self) -> NoiseSampler {
        NoiseSampler {
            delta: self.delta,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }
}

/// Stateful noise stream; identical seeds give identical streams.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    delta: f64,
    rng: ChaCha8Rng,
}

impl NoiseSampler {
    fn noise3(&mut self) -> Vector3<f64> {
        Vector3::new(
            StandardNormal.sample(&mut self.rng),
            StandardNormal.sample(&mut self.rng),
            StandardNormal.sample(&mut self.rng),
        ) * self.delta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Adds i.i.d. Gaussian noise to every channel of a reading. With `delta = 0`
/// the reading is returned unchanged (the sampler still advances, keeping
/// draw positions independent of the noise level).
pub fn apply_noise(reading: &SensorReading, sampler: &mut NoiseSampler) -> SensorReading {
    SensorReading {
        omega: reading.omega + sampler.noise3(),
        vel: reading.vel + sampler.noise3(),
        abar: reading.abar + sampler.noise3(),
        force: reading.force + sampler.noise3(),
        torque: reading.torque + sampler.noise3(),
    }
}

type Derivative = (Quat, Vector3<f64>, Vector3<f64>, Vector3<f64>);

fn state_derivative(
    state: &RigidBodyState,
    params: &InertialParams,
    inertia_inv: &Matrix3<f64>,
    wrench_com: &Wrench,
    gravity: &Vector3<f64>,
) -> Derivative {
    let r = state.rotation();
    let q_dot = (*state.att.inner() * Quat::pure(state.omega)).scale(0.5);
    let p_dot = r * state.vel;
    let omega_dot =
        inertia_inv * (wrench_com.torque - state.omega.cross(&(params.inertia * state.omega)));
    let v_dot =
        wrench_com.force / params.mass + r.transpose() * gravity - state.omega.cross(&state.vel);
    (q_dot, p_dot, omega_dot, v_dot)
}

/// Advances the mass-center state by one classical RK4 step under a constant
/// wrench (expressed at the mass center) and world-frame gravity.
pub fn step_dynamics(
    state: &RigidBodyState,
    params: &InertialParams,
    wrench_com: &Wrench,
    gravity: &Vector3<f64>,
    dt: f64,
) -> Result<RigidBodyState> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let inertia_inv = params
        .inertia
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite { context: "inertia" })?;

    let add = |s: &RigidBodyState, k: &Derivative, h: f64| RigidBodyState {
        att: UnitQuat::new_unchecked(*s.att.inner() + k.0.scale(h)),
        pos: s.pos + k.1 * h,
        omega: s.omega + k.2 * h,
        vel: s.vel + k.3 * h,
    };

    let k1 = state_derivative(state, params, &inertia_inv, wrench_com, gravity);
    let s2 = add(state, &k1, 0.5 * dt);
    let k2 = state_derivative(&s2, params, &inertia_inv, wrench_com, gravity);
    let s3 = add(state, &k2, 0.5 * dt);
    let k3 = state_derivative(&s3, params, &inertia_inv, wrench_com, gravity);
    let s4 = add(state, &k3, dt);
    let k4 = state_derivative(&s4, params, &inertia_inv, wrench_com, gravity);

    let q_next =
        *state.att.inner() + (k1.0 + k2.0.scale(2.0) + k3.0.scale(2.0) + k4.0).scale(dt / 6.0);
    let next = RigidBodyState {
        att: UnitQuat::new_normalize(q_next),
        pos: state.pos + (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1) * (dt / 6.0),
        omega: state.omega + (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2) * (dt / 6.0),
        vel: state.vel + (k1.3 + 2.0 * k2.3 + 2.0 * k3.3 + k4.3) * (dt / 6.0),
    };
    let finite = next.pos.iter().all(|x| x.is_finite())
        && next.omega.iter().all(|x| x.is_finite())
        && next.vel.iter().all(|x| x.is_finite())
        && next.att.inner().norm().is_finite();
    if !finite {
        return Err(Error::NonFinite {
            context: "rigid body integration step",
        });
    }
    Ok(next)
}

/// Derives every robot's noise-free kinematic readings from the mass-center
/// state: twists via the adjoint of the fixed sensor offset, angular
/// acceleration by rotating the analytic `ω̇`, and proper acceleration via
/// `ā_i = R_ic ā_c + p_c^i × α_i`.
pub fn sensor_kinematics(
    state: &RigidBodyState,
    layout: &ContactLayout,
    params: &InertialParams,
    wrench_com: &Wrench,
    gravity: &Vector3<f64>,
) -> Result<Vec<SensorKinematics>> {
    let inertia_inv = params
        .inertia
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite { context: "inertia" })?;
    let alpha_c =
        inertia_inv * (wrench_com.torque - state.omega.cross(&(params.inertia * state.omega)));
    // Proper acceleration of the mass center: ā = v̇ − Rᵀg = F/m − ω × v.
    let abar_c = wrench_com.force / params.mass - state.omega.cross(&state.vel);
    let xi_c = Twist::new(state.omega, state.vel);
    let _ = gravity; // gravity cancels out of every proper-acceleration reading

    let mut out = Vec::with_capacity(layout.len());
    for g_ci in &layout.poses {
        let g_ic = g_ci.inverse();
        let twist = g_ic.transform_twist(&xi_c);
        let alpha = g_ic.rot * alpha_c;
        // g_ic.trans is the mass center expressed in the sensor frame.
        let abar = g_ic.rot * abar_c + g_ic.trans.cross(&alpha);
        let coord_accel = abar + twist.omega.cross(&twist.vel);
        out.push(SensorKinematics {
            twist,
            abar,
            alpha,
            coord_accel,
        });
    }
    Ok(out)
}

/// Total wrench at the mass center produced by per-robot wrenches applied at
/// their sensor frames: `w_c = Σ Ad(g_ic)ᵀ w_i` with `g_ic = g_ci⁻¹`.
pub fn wrench_at_com(layout: &ContactLayout, applied: &[Wrench]) -> Wrench {
    let mut total = Wrench::zero();
    for (g_ci, w) in layout.poses.iter().zip(applied) {
        total = total + g_ci.inverse().transform_wrench_transpose(w);
    }
    total
}

/// Open-loop persistently exciting wrench profile: independent sinusoids per
/// robot, per axis, with frequencies and phases spread by fixed index tables.
#[derive(Debug, Clone, Copy)]
pub struct WrenchProfile {
    pub force_amp: f64,
    pub torque_amp: f64,
    /// Base frequency in Hz; per-channel frequencies are staggered multiples.
    pub base_freq: f64,
}

impl WrenchProfile {
    pub fn evaluate(&self, t: f64, robot: usize) -> Wrench {
        let mut force = Vector3::zeros();
        let mut torque = Vector3::zeros();
        for axis in 0..3 {
            let idx = (3 * robot + axis) as f64;
            let freq_f = self.base_freq * (1.0 + 0.21 * idx);
            let freq_t = self.base_freq * (1.15 + 0.17 * idx);
            let phase_f = idx * 2.399963; // golden-angle stagger
            let phase_t = 1.1 + idx * 1.712;
            force[axis] = self.force_amp * (std::f64::consts::TAU * freq_f * t + phase_f).sin();
            torque[axis] = self.torque_amp * (std::f64::consts::TAU * freq_t * t + phase_t).sin();
        }
        Wrench { torque, force }
    }

    /// Common period of all channels: every frequency in the table is an
    /// integer multiple of `base_freq / 100`.
    pub fn period(&self) -> f64 {
        100.0 / self.base_freq
    }
}

/// Share of the static gravity load assigned to one robot: the world-frame
/// holding force `−m g / n` resolved into its sensor frame. Part of the
/// scenario's applied forces, not of the estimator.
pub fn gravity_hold_share(
    state: &RigidBodyState,
    layout: &ContactLayout,
    robot: usize,
    total_mass: f64,
    gravity: &Vector3<f64>,
    n_robots: usize,
) -> Wrench {
    let r_wc = state.rotation();
    let f_world = -gravity * (total_mass / n_robots as f64);
    let f_sensor = layout.poses[robot].rot.transpose() * (r_wc.transpose() * f_world);
    Wrench {
        torque: Vector3::zeros(),
        force: f_sensor,
    }
}
