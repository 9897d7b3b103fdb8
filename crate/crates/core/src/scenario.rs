//! Experiment configuration: JSON-serializable scenario description with
//! validation and the default five-robot ring scenario.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::Pose;
use crate::sim::{InertialParams, WrenchProfile};

/// One contact: sensor-frame pose in the body reference frame, orientation
/// given as axis-angle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    pub position: [f64; 3],
    pub axis: [f64; 3],
    pub angle: f64,
}

impl ContactConfig {
    pub fn pose(&self) -> Pose {
        Pose::from_axis_angle(
            Vector3::from_column_slice(&self.axis),
            self.angle,
            Vector3::from_column_slice(&self.position),
        )
    }
}

/// Payload parameters in the body reference frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia: [[f64; 3]; 3],
}

impl ParamsConfig {
    pub fn to_params(&self) -> Result<InertialParams> {
        let m = Matrix3::from_fn(|i, j| self.inertia[i][j]);
        InertialParams::new(self.mass, Vector3::from_column_slice(&self.com), m)
    }
}

/// Sudden payload change at a given simulation time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeEvent {
    pub time: f64,
    pub params: ParamsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrenchConfig {
    pub force_amp: f64,
    pub torque_amp: f64,
    pub base_freq: f64,
    /// Robots additionally hold the static gravity load (split evenly).
    pub gravity_compensation: bool,
}

impl WrenchConfig {
    pub fn profile(&self) -> WrenchProfile {
        WrenchProfile {
            force_amp: self.force_amp,
            torque_amp: self.torque_amp,
            base_freq: self.base_freq,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    pub tol: f64,
    pub max_iters: usize,
}

/// Full scenario description. Every field has a default matching the
/// five-robot ring experiment; unknown JSON keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub robots: usize,
    pub contacts: Vec<ContactConfig>,
    pub edges: Vec<(usize, usize)>,
    /// Measurement noise std-dev, identical for all channels.
    pub delta: f64,
    /// Truth integrator step (s).
    pub dt: f64,
    /// Sensor/filter period in integrator steps.
    pub sensor_every: usize,
    pub phase1_duration: f64,
    pub phase2_duration: f64,
    /// Forgetting factor of the dynamic-parameter filter.
    pub lambda: f64,
    /// Forgetting factor of the pose filter (1 = none; the pose is constant).
    pub lambda_pose: f64,
    /// Initial covariance scale: P₀ = initial_covariance · I.
    pub initial_covariance: f64,
    pub gravity: [f64; 3],
    pub params: ParamsConfig,
    pub change_events: Vec<ChangeEvent>,
    pub wrench: WrenchConfig,
    pub consensus: ConsensusConfig,
    /// Average the per-robot parameter estimates across the network each
    /// step (mapped through the estimated coordinate changes).
    pub parameter_consensus: bool,
    /// Minimum rotation-information eigengap for phase-1 poses to be
    /// accepted by phase 2.
    pub pose_gap_threshold: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            robots: 5,
            contacts: vec![
                ContactConfig {
                    position: [0.50, 0.00, 0.05],
                    axis: [0.0, 0.0, 1.0],
                    angle: std::f64::consts::PI,
                },
                ContactConfig {
                    position: [-0.50, 0.10, -0.05],
                    axis: [0.0, 1.0, 0.0],
                    angle: std::f64::consts::FRAC_PI_2,
                },
                ContactConfig {
                    position: [0.05, 0.50, -0.10],
                    axis: [1.0, 0.0, 0.0],
                    angle: -std::f64::consts::FRAC_PI_2,
                },
                ContactConfig {
                    position: [-0.10, -0.50, 0.05],
                    axis: [1.0, 1.0, 1.0],
                    angle: 2.0 * std::f64::consts::FRAC_PI_3,
                },
                ContactConfig {
                    position: [0.05, -0.05, 0.50],
                    axis: [1.0, 0.0, 0.0],
                    angle: std::f64::consts::PI,
                },
            ],
            edges: vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)],
            delta: 0.4,
            dt: 1e-3,
            sensor_every: 10,
            phase1_duration: 8.0,
            phase2_duration: 42.0,
            lambda: 1.005,
            lambda_pose: 1.0,
            initial_covariance: 100.0,
            gravity: [0.0, 0.0, -9.81],
            params: ParamsConfig {
                mass: 2.0,
                com: [0.08, -0.05, 0.12],
                inertia: [
                    [0.45, -0.05, 0.02],
                    [-0.05, 0.35, -0.03],
                    [0.02, -0.03, 0.28],
                ],
            },
            change_events: Vec::new(),
            wrench: WrenchConfig {
                force_amp: 2.4,
                torque_amp: 0.5,
                base_freq: 0.35,
                gravity_compensation: true,
            },
            consensus: ConsensusConfig {
                tol: 1e-8,
                max_iters: 200,
            },
            parameter_consensus: true,
            pose_gap_threshold: 0.9,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// The default scenario extended with the sudden load change used by the
    /// adaptive experiment: at t = 35 s the payload switches to 1.2 kg with a
    /// new mass center and inertia.
    pub fn default_adaptive() -> Self {
        let mut cfg = ScenarioConfig::default();
        cfg.change_events.push(ChangeEvent {
            time: 35.0,
            params: ParamsConfig {
                mass: 1.2,
                com: [-0.04, 0.07, 0.02],
                inertia: [[0.28, 0.03, -0.01], [0.03, 0.22, 0.02], [-0.01, 0.02, 0.16]],
            },
        });
        cfg
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn contact_poses(&self) -> Vec<Pose> {
        self.contacts.iter().map(ContactConfig::pose).collect()
    }

    pub fn end_time(&self) -> f64 {
        self.phase1_duration + self.phase2_duration
    }

    pub fn sensor_dt(&self) -> f64 {
        self.dt * self.sensor_every as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.robots == 0 {
            return Err(Error::InvalidConfig("robot count must be positive".into()));
        }
        if self.contacts.len() != self.robots {
            return Err(Error::InvalidConfig(format!(
                "{} contacts configured for {} robots",
                self.contacts.len(),
                self.robots
            )));
        }
        for (k, c) in self.contacts.iter().enumerate() {
            let axis = Vector3::from_column_slice(&c.axis);
            if axis.norm() < 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "contact {k} has a zero rotation axis"
                )));
            }
        }
        // Edge sanity plus connectivity by BFS.
        let mut adj = vec![Vec::new(); self.robots];
        for &(a, b) in &self.edges {
            if a >= self.robots || b >= self.robots || a == b {
                return Err(Error::InvalidConfig(format!("invalid edge ({a}, {b})")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        if self.robots > 1 {
            let mut seen = vec![false; self.robots];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut reach = 1;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        reach += 1;
                        stack.push(v);
                    }
                }
            }
            if reach != self.robots {
                return Err(Error::Disconnected {
                    nodes: self.robots,
                    reachable: reach,
                });
            }
        }
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::InvalidConfig("delta must be non-negative".into()));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 || self.sensor_every == 0 {
            return Err(Error::InvalidConfig(
                "dt must be positive and sensor_every at least 1".into(),
            ));
        }
        if !(self.phase1_duration.is_finite() && self.phase1_duration > 0.0)
            || !(self.phase2_duration.is_finite() && self.phase2_duration >= 0.0)
        {
            return Err(Error::InvalidConfig("durations must be positive".into()));
        }
        if self.lambda.is_nan()
            || self.lambda < 1.0
            || self.lambda_pose.is_nan()
            || self.lambda_pose < 1.0
        {
            return Err(Error::InvalidConfig(
                "forgetting factors must be at least 1".into(),
            ));
        }
        if !self.initial_covariance.is_finite() || self.initial_covariance <= 0.0 {
            return Err(Error::InvalidConfig(
                "initial covariance must be positive".into(),
            ));
        }
        self.params.to_params()?;
        let end = self.end_time();
        for e in &self.change_events {
            if e.time <= self.phase1_duration || e.time >= end {
                return Err(Error::InvalidConfig(format!(
                    "change event at t = {} outside the phase-2 window ({}, {})",
                    e.time, self.phase1_duration, end
                )));
            }
            e.params.to_params()?;
        }
        if self.consensus.tol.is_nan() || self.consensus.tol <= 0.0 || self.consensus.max_iters == 0
        {
            return Err(Error::InvalidConfig(
                "consensus tolerance and iteration budget must be positive".into(),
            ));
        }
        if !(self.pose_gap_threshold.is_finite()
            && self.pose_gap_threshold > 0.0
            && self.pose_gap_threshold < 1.0)
        {
            return Err(Error::InvalidConfig(
                "pose gap threshold must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}
