//! Two-phase experiment driver, metrics and CSV emission.
//!
//! Phase 1: every edge of the communication graph runs the dual-quaternion
//! pose filter on its noisy twist pairs (one direction per edge; the reverse
//! transform is the inverse). Phase 2: each robot recovers the total applied
//! wrench by consensus, refines its angular-acceleration estimate, feeds the
//! combined observation model into its recursive least-squares filter, and
//! optionally averages parameter estimates across the network through the
//! estimated coordinate changes.
//!
//! The driver is single-threaded and fully deterministic: a `(config, seed)`
//! pair fixes every output byte. A phase-2 run re-simulates the phase-1 time
//! span with the identical noise stream, so running the phases separately or
//! together produces the same measurements.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix4, Matrix6, Vector3};

use crate::consensus::{run_consensus, total_wrench, RobotNetwork};
use crate::dq::UnitDualQuat;
use crate::error::{Error, Result};
use crate::filter::{DqPoseFilter, Rls};
use crate::obs::{
    build_alpha_observation, build_combined_observation, build_pose_observation,
    consensus_transforms, estimate_alpha, fuse_alpha, CombinedInputs, CombinedNoise,
    DynamicUnknowns,
};
use crate::scenario::{ChangeEvent, ScenarioConfig};
use crate::se3::{Pose, Twist, Wrench};
use crate::sim::{
    apply_noise, gravity_hold_share, inertia_to_symvec, sensor_kinematics, step_dynamics,
    wrench_at_com, ContactLayout, InertialParams, NoiseModel, NoiseSampler, RigidBodyState,
    SensorReading, WrenchProfile,
};

// ---------------------------------------------------------------------------
// Metrics and CSV emission
// ---------------------------------------------------------------------------

/// One metric sample: `(time, entity, metric, value)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub time: f64,
    pub entity: String,
    pub metric: &'static str,
    pub value: f64,
}

/// Writes records as UTF-8 CSV with header `time,entity,metric,value`,
/// values in 9-significant-digit scientific notation, rows ordered by
/// `(time, entity, metric)`. Identical record sets produce byte-identical
/// files.
pub fn emit_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut sorted: Vec<&MetricsRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            .then_with(|| a.entity.cmp(&b.entity))
            .then_with(|| a.metric.cmp(b.metric))
    });
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    writeln!(out, "time,entity,metric,value").map_err(io_err)?;
    for r in sorted {
        writeln!(
            out,
            "{:.6},{},{},{:.8e}",
            r.time, r.entity, r.metric, r.value
        )
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

fn edge_entity(a: usize, b: usize) -> String {
    format!("edge_{a}_{b}")
}

fn robot_entity(i: usize) -> String {
    format!("robot_{i}")
}

// ---------------------------------------------------------------------------
// Pose estimates
// ---------------------------------------------------------------------------

/// Relative poses over the communication graph: one stored direction per
/// edge (`g_ba` for the canonical edge `(a, b)`, `a < b`), the reverse
/// direction given by the inverse.
#[derive(Debug, Clone)]
pub struct PoseEstimates {
    n: usize,
    edges: Vec<(usize, usize)>,
    by_edge: BTreeMap<(usize, usize), Pose>,
    eigengap: BTreeMap<(usize, usize), f64>,
}

impl PoseEstimates {
    pub fn from_edges(
        n: usize,
        entries: impl IntoIterator<Item = ((usize, usize), Pose, f64)>,
    ) -> Self {
        let mut by_edge = BTreeMap::new();
        let mut eigengap = BTreeMap::new();
        let mut edges = Vec::new();
        for ((a, b), pose, gap) in entries {
            debug_assert!(a < b);
            edges.push((a, b));
            by_edge.insert((a, b), pose);
            eigengap.insert((a, b), gap);
        }
        PoseEstimates {
            n,
            edges,
            by_edge,
            eigengap,
        }
    }

    /// True relative poses taken from the contact layout (eigengap 1).
    pub fn from_layout(layout: &[Pose], edges: &[(usize, usize)]) -> Self {
        Self::from_edges(
            layout.len(),
            edges.iter().map(|&(a, b)| {
                let (a, b) = if a < b { (a, b) } else { (b, a) };
                let g_ba = layout[b].inverse().compose(&layout[a]);
                ((a, b), g_ba, 1.0)
            }),
        )
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `g_ji` for an adjacent ordered pair.
    pub fn relative(&self, j: usize, i: usize) -> Pose {
        if i == j {
            return Pose::identity();
        }
        if i < j {
            self.by_edge[&(i, j)]
        } else {
            self.by_edge[&(j, i)].inverse()
        }
    }

    /// `g_ji` for an arbitrary pair, composed along a breadth-first path.
    pub fn relative_any(&self, j: usize, i: usize) -> Pose {
        if i == j {
            return Pose::identity();
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        // BFS from i, carrying g_{node,i}.
        let mut carried: Vec<Option<Pose>> = vec![None; self.n];
        carried[i] = Some(Pose::identity());
        let mut queue = std::collections::VecDeque::from([i]);
        while let Some(u) = queue.pop_front() {
            if u == j {
                break;
            }
            let g_ui = carried[u].unwrap();
            for &v in &adj[u] {
                if carried[v].is_none() {
                    carried[v] = Some(self.relative(v, u).compose(&g_ui));
                    queue.push_back(v);
                }
            }
        }
        carried[j].expect("connected graph")
    }

    pub fn worst_gap(&self) -> f64 {
        self.eigengap.values().fold(1.0_f64, |acc, &g| acc.min(g))
    }
}

// ---------------------------------------------------------------------------
// Truth engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct TruthSnapshot {
    com_in_sensor: Vec<Vector3<f64>>,
    inertia_symvec: Vec<[f64; 6]>,
    mass: f64,
}

#[derive(Debug, Clone)]
struct SensorSnapshot {
    t: f64,
    readings: Vec<SensorReading>,
    truth: TruthSnapshot,
}

struct Engine {
    dt: f64,
    sensor_every: usize,
    gravity: Vector3<f64>,
    profile: WrenchProfile,
    gravity_comp: bool,
    layout_ref: Vec<Pose>,
    params: InertialParams,
    layout: ContactLayout,
    state: RigidBodyState,
    sampler: NoiseSampler,
    events: Vec<ChangeEvent>,
    next_event: usize,
    step_index: u64,
}

impl Engine {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.params.to_params()?;
        let layout_ref = cfg.contact_poses();
        let layout = ContactLayout::from_reference(&layout_ref, &params.com);
        let mut events = cfg.change_events.clone();
        events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        Ok(Engine {
            dt: cfg.dt,
            sensor_every: cfg.sensor_every,
            gravity: Vector3::from_column_slice(&cfg.gravity),
            profile: cfg.wrench.profile(),
            gravity_comp: cfg.wrench.gravity_compensation,
            layout_ref,
            params,
            layout,
            state: RigidBodyState::at_rest(),
            sampler: NoiseModel::new(cfg.delta, cfg.seed)?.sampler(),
            events,
            next_event: 0,
            step_index: 0,
        })
    }

    fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    /// Applies pending change events: swap the payload parameters and move
    /// the state to the new mass-center frame (same axes, shifted origin),
    /// keeping the body's kinematics continuous.
    fn fire_events(&mut self) -> Result<()> {
        while self.next_event < self.events.len()
            && self.events[self.next_event].time <= self.time() + 0.5 * self.dt
        {
            let new_params = self.events[self.next_event].params.to_params()?;
            let shift = new_params.com - self.params.com;
            let r = self.state.rotation();
            self.state.pos += r * shift;
            self.state.vel += self.state.omega.cross(&shift);
            self.params = new_params;
            self.layout = ContactLayout::from_reference(&self.layout_ref, &self.params.com);
            self.next_event += 1;
        }
        Ok(())
    }

    fn applied_wrenches(&self) -> Vec<Wrench> {
        let t = self.time();
        let n = self.layout.len();
        (0..n)
            .map(|i| {
                let mut w = self.profile.evaluate(t, i);
                if self.gravity_comp {
                    let hold = gravity_hold_share(
                        &self.state,
                        &self.layout,
                        i,
                        self.params.mass,
                        &self.gravity,
                        n,
                    );
                    w = w + hold;
                }
                w
            })
            .collect()
    }

    /// Advances one sensor period and returns the noisy readings plus the
    /// per-robot identification truth at the new time.
    fn next_snapshot(&mut self) -> Result<SensorSnapshot> {
        for _ in 0..self.sensor_every {
            self.fire_events()?;
            let applied = self.applied_wrenches();
            let wrench_com = wrench_at_com(&self.layout, &applied);
            self.state = step_dynamics(
                &self.state,
                &self.params,
                &wrench_com,
                &self.gravity,
                self.dt,
            )?;
            self.step_index += 1;
        }
        self.fire_events()?;

        let applied = self.applied_wrenches();
        let wrench_com = wrench_at_com(&self.layout, &applied);
        let kin = sensor_kinematics(
            &self.state,
            &self.layout,
            &self.params,
            &wrench_com,
            &self.gravity,
        )?;
        let mut readings = Vec::with_capacity(kin.len());
        for (k, w) in kin.iter().zip(&applied) {
            let clean = SensorReading {
                omega: k.twist.omega,
                vel: k.twist.vel,
                abar: k.abar,
                force: w.force,
                torque: w.torque,
            };
            readings.push(apply_noise(&clean, &mut self.sampler));
        }

        let n = self.layout.len();
        let truth = TruthSnapshot {
            com_in_sensor: (0..n).map(|i| self.layout.com_in_sensor(i)).collect(),
            inertia_symvec: (0..n)
                .map(|i| {
                    let r_ic = self.layout.poses[i].rot.transpose();
                    inertia_to_symvec(&(r_ic * self.params.inertia * r_ic.transpose()))
                })
                .collect(),
            mass: self.params.mass,
        };
        Ok(SensorSnapshot {
            t: self.time(),
            readings,
            truth,
        })
    }

    /// True relative pose between sensor frames (constant; independent of the
    /// mass-center position).
    fn true_relative(&self, j: usize, i: usize) -> Pose {
        self.layout_ref[j].inverse().compose(&self.layout_ref[i])
    }
}

// ---------------------------------------------------------------------------
// Phase 1
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct EdgeTrace {
    pub time: Vec<f64>,
    pub rot_err: Vec<f64>,
    pub trans_err: Vec<f64>,
}

#[derive(Debug)]
pub struct Phase1Result {
    pub poses: PoseEstimates,
    pub traces: BTreeMap<(usize, usize), EdgeTrace>,
    pub tie_seen: BTreeMap<(usize, usize), bool>,
    pub metrics: Vec<MetricsRecord>,
}

impl Phase1Result {
    /// Mean rotation/translation error over edges at the latest recorded time
    /// not after `t`.
    pub fn mean_errors_at(&self, t: f64) -> Option<(f64, f64)> {
        let mut rot = 0.0;
        let mut trans = 0.0;
        let mut count = 0.0;
        for trace in self.traces.values() {
            let idx = latest_index(&trace.time, t)?;
            rot += trace.rot_err[idx];
            trans += trace.trans_err[idx];
            count += 1.0;
        }
        Some((rot / count, trans / count))
    }
}

fn latest_index(times: &[f64], t: f64) -> Option<usize> {
    let mut found = None;
    for (k, &tk) in times.iter().enumerate() {
        if tk <= t + 1e-9 {
            found = Some(k);
        } else {
            break;
        }
    }
    found
}

fn pose_errors(estimate: &UnitDualQuat, truth: &Pose) -> (f64, f64) {
    let q_true = UnitDualQuat::from_pose(truth);
    let dot = estimate
        .inner()
        .real
        .as_vector()
        .dot(&q_true.inner().real.as_vector());
    let rot = 2.0 * dot.abs().clamp(0.0, 1.0).acos();
    let trans = (estimate.to_pose().trans - truth.trans).norm();
    (rot, trans)
}

/// Runs the relative-pose identification phase: per edge, the constrained
/// dual-quaternion filter over noisy twist pairs, with error traces against
/// the true layout.
pub fn run_phase1(cfg: &ScenarioConfig) -> Result<Phase1Result> {
    let mut engine = Engine::new(cfg)?;
    let canonical: Vec<(usize, usize)> = cfg
        .edges
        .iter()
        .map(|&(a, b)| if a < b { (a, b) } else { (b, a) })
        .collect();
    let mut filters: BTreeMap<(usize, usize), DqPoseFilter> = canonical
        .iter()
        .map(|&e| Ok((e, DqPoseFilter::new(cfg.lambda_pose)?)))
        .collect::<Result<_>>()?;
    let mut traces: BTreeMap<(usize, usize), EdgeTrace> = canonical
        .iter()
        .map(|&e| (e, EdgeTrace::default()))
        .collect();
    let mut tie_seen: BTreeMap<(usize, usize), bool> =
        canonical.iter().map(|&e| (e, false)).collect();
    let mut metrics = Vec::new();

    // Twist-channel residual covariance; any positive scalar works at δ = 0
    // since the filter estimates are invariant to a common rescaling of R.
    let r_scale = if cfg.delta > 0.0 {
        2.0 * cfg.delta * cfg.delta
    } else {
        1.0
    };
    let r_pose = Matrix4::identity() * r_scale;
    let steps = (cfg.phase1_duration / cfg.sensor_dt()).round() as usize;

    for _ in 0..steps {
        let snap = engine.next_snapshot()?;
        for &(a, b) in &canonical {
            let xi_a = Twist::new(snap.readings[a].omega, snap.readings[a].vel);
            let xi_b = Twist::new(snap.readings[b].omega, snap.readings[b].vel);
            let obs = build_pose_observation(&xi_a, &xi_b);
            let filter = filters.get_mut(&(a, b)).unwrap();
            filter.update(&obs, &r_pose)?;
            if filter.tie_detected {
                tie_seen.insert((a, b), true);
            }
            let truth = engine.true_relative(b, a);
            let (rot, trans) = pose_errors(&filter.estimate(), &truth);
            let trace = traces.get_mut(&(a, b)).unwrap();
            trace.time.push(snap.t);
            trace.rot_err.push(rot);
            trace.trans_err.push(trans);
            metrics.push(MetricsRecord {
                time: snap.t,
                entity: edge_entity(a, b),
                metric: "rot_err",
                value: rot,
            });
            metrics.push(MetricsRecord {
                time: snap.t,
                entity: edge_entity(a, b),
                metric: "trans_err",
                value: trans,
            });
        }
    }

    let poses = PoseEstimates::from_edges(
        cfg.robots,
        canonical.iter().map(|&(a, b)| {
            let f = &filters[&(a, b)];
            ((a, b), f.estimate().to_pose(), f.rotation_eigengap())
        }),
    );
    Ok(Phase1Result {
        poses,
        traces,
        tie_seen,
        metrics,
    })
}

// ---------------------------------------------------------------------------
// Phase 2
// ---------------------------------------------------------------------------

/// Where phase 2 takes its relative poses from.
pub enum PoseSource<'a> {
    /// Converged phase-1 estimates (gap-checked against the config threshold).
    Estimated(&'a Phase1Result),
    /// Ground-truth layout poses (the `--true-poses` path).
    True,
}

#[derive(Debug, Clone, Copy)]
pub struct Phase2Options {
    /// Recover the total wrench by consensus; when false every robot uses
    /// only its own applied wrench (ablation: identification must fail).
    pub wrench_consensus: bool,
}

impl Default for Phase2Options {
    fn default() -> Self {
        Phase2Options {
            wrench_consensus: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RobotTrace {
    pub time: Vec<f64>,
    pub inertia_mae: Vec<f64>,
    pub pc_err: Vec<f64>,
    pub mass_est: Vec<f64>,
    pub mass_err: Vec<f64>,
}

#[derive(Debug)]
pub struct Phase2Result {
    pub traces: Vec<RobotTrace>,
    pub estimates: Vec<DynamicUnknowns>,
    pub metrics: Vec<MetricsRecord>,
}

/// Network-mean errors at the latest processed step not after `t`.
#[derive(Debug, Clone, Copy)]
pub struct Phase2Point {
    pub inertia_mae: f64,
    pub pc_err: f64,
    pub mass_mean: f64,
    pub mass_err: f64,
}

impl Phase2Result {
    pub fn mean_errors_at(&self, t: f64) -> Option<Phase2Point> {
        let mut p = Phase2Point {
            inertia_mae: 0.0,
            pc_err: 0.0,
            mass_mean: 0.0,
            mass_err: 0.0,
        };
        let n = self.traces.len() as f64;
        for trace in &self.traces {
            let idx = latest_index(&trace.time, t)?;
            p.inertia_mae += trace.inertia_mae[idx] / n;
            p.pc_err += trace.pc_err[idx] / n;
            p.mass_mean += trace.mass_est[idx] / n;
            p.mass_err += trace.mass_err[idx] / n;
        }
        Some(p)
    }
}

struct Phase2Setup {
    rel: BTreeMap<(usize, usize), Pose>,
    wrench_net: Option<RobotNetwork>,
    param_net: Option<RobotNetwork>,
    wrench_cov: Vec<Matrix6<f64>>,
    filters: Vec<Rls>,
    neighbors: Vec<Vec<usize>>,
}

fn phase2_setup(
    cfg: &ScenarioConfig,
    source: &PoseSource<'_>,
    options: &Phase2Options,
) -> Result<Phase2Setup> {
    let estimates = match source {
        PoseSource::Estimated(p1) => {
            let gap = p1.poses.worst_gap();
            if gap < cfg.pose_gap_threshold {
                return Err(Error::PosesNotConverged { gap });
            }
            p1.poses.clone()
        }
        PoseSource::True => PoseEstimates::from_layout(&cfg.contact_poses(), &cfg.edges),
    };

    let mut neighbors = vec![Vec::new(); cfg.robots];
    for &(a, b) in &cfg.edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }

    // Ordered relative poses for every adjacent pair.
    let mut rel = BTreeMap::new();
    for &(a, b) in &cfg.edges {
        rel.insert((b, a), estimates.relative(b, a));
        rel.insert((a, b), estimates.relative(a, b));
    }

    let wrench_net = if options.wrench_consensus {
        Some(RobotNetwork::new(cfg.robots, &cfg.edges, 6, |i, j| {
            let m = consensus_transforms(&rel[&(j, i)]).wrench;
            DMatrix::from_fn(6, 6, |a, b| m[(a, b)])
        })?)
    } else {
        None
    };
    let param_net = if cfg.parameter_consensus {
        Some(RobotNetwork::new(cfg.robots, &cfg.edges, 11, |i, j| {
            let tf = consensus_transforms(&rel[&(j, i)]);
            let mut m = DMatrix::identity(11, 11);
            for a in 0..4 {
                for b in 0..4 {
                    m[(a, b)] = tf.pc_homogeneous[(a, b)];
                }
            }
            for a in 0..6 {
                for b in 0..6 {
                    m[(4 + a, 4 + b)] = tf.inertia[(a, b)];
                }
            }
            m
        })?)
    } else {
        None
    };

    // Total-wrench covariance per robot: δ² Σ_j Ad(g_ji)ᵀ Ad(g_ji) with the
    // estimated poses (own wrench only in the ablation).
    let d2 = cfg.delta * cfg.delta;
    let wrench_cov: Vec<Matrix6<f64>> = (0..cfg.robots)
        .map(|i| {
            if options.wrench_consensus {
                let mut s = Matrix6::zeros();
                for j in 0..cfg.robots {
                    let ad = estimates.relative_any(j, i).adjoint();
                    s += ad.transpose() * ad * d2;
                }
                s
            } else {
                Matrix6::identity() * d2
            }
        })
        .collect();

    // Initial guesses: identity inertia, unit mass, mass center at the
    // geometric center of the robot's own and neighbouring contact origins
    // (the only contact points it can locate from the estimated poses).
    let filters: Vec<Rls> = (0..cfg.robots)
        .map(|i| {
            let mut center = Vector3::zeros();
            let mut count = 1.0;
            for &j in &neighbors[i] {
                center += rel[&(i, j)].trans;
                count += 1.0;
            }
            center /= count;
            let x0 = DynamicUnknowns::new(center, [1.0, 1.0, 1.0, 0.0, 0.0, 0.0], 1.0);
            Rls::new(
                x0.to_vector(),
                DMatrix::identity(DynamicUnknowns::DIM, DynamicUnknowns::DIM)
                    / cfg.initial_covariance,
                cfg.lambda,
            )
        })
        .collect::<Result<_>>()?;

    Ok(Phase2Setup {
        rel,
        wrench_net,
        param_net,
        wrench_cov,
        filters,
        neighbors,
    })
}

/// Runs the dynamic-parameter identification phase (and any configured load
/// change): re-simulates the timeline from t = 0 with the same noise stream,
/// starts estimating once phase 1 ends, and returns per-robot error traces.
pub fn run_phase2(
    cfg: &ScenarioConfig,
    source: PoseSource<'_>,
    options: Phase2Options,
) -> Result<Phase2Result> {
    let setup = phase2_setup(cfg, &source, &options)?;
    let Phase2Setup {
        rel,
        wrench_net,
        param_net,
        wrench_cov,
        mut filters,
        neighbors,
    } = setup;

    let mut engine = Engine::new(cfg)?;
    let dt_s = cfg.sensor_dt();
    let total_steps = (cfg.end_time() / dt_s).round() as usize + 1;
    let n = cfg.robots;

    let mut traces = vec![RobotTrace::default(); n];
    let mut metrics = Vec::new();

    let mut window: Vec<SensorSnapshot> = Vec::with_capacity(3);
    for _ in 0..total_steps {
        let snap = engine.next_snapshot()?;
        window.push(snap);
        if window.len() > 3 {
            window.remove(0);
        }
        if window.len() < 3 {
            continue;
        }
        let (prev, cur, next) = (&window[0], &window[1], &window[2]);
        if cur.t <= cfg.phase1_duration + 1e-9 {
            continue;
        }

        // Total wrench at every robot.
        let own: Vec<Wrench> = cur
            .readings
            .iter()
            .map(|r| Wrench::new(r.torque, r.force))
            .collect();
        let totals: Vec<Wrench> = match &wrench_net {
            Some(net) => total_wrench(net, &own, cfg.consensus.tol, cfg.consensus.max_iters)?,
            None => own.clone(),
        };

        // Angular-acceleration fusion: central differences first, then the
        // per-robot weighted solve over neighbour data.
        let cds: Vec<Vector3<f64>> = (0..n)
            .map(|i| estimate_alpha(&prev.readings[i].omega, &next.readings[i].omega, dt_s))
            .collect::<Result<_>>()?;
        let mut alphas = Vec::with_capacity(n);
        for i in 0..n {
            let mut neighbor_cd = Vec::new();
            let mut accel = Vec::new();
            for &j in &neighbors[i] {
                let g_ji = rel[&(j, i)];
                neighbor_cd.push((g_ji.rot, cds[j]));
                accel.push(build_alpha_observation(
                    &g_ji,
                    &cur.readings[i].abar,
                    &cur.readings[j].abar,
                ));
            }
            alphas.push(fuse_alpha(&cds[i], &neighbor_cd, &accel, dt_s, cfg.delta)?);
        }

        // Combined observation + RLS update per robot.
        for i in 0..n {
            let inputs = CombinedInputs {
                omega: cur.readings[i].omega,
                vel: cur.readings[i].vel,
                abar: cur.readings[i].abar,
                alpha: alphas[i].alpha,
                total_force: totals[i].force,
                total_torque: totals[i].torque,
            };
            let noise = CombinedNoise {
                delta: cfg.delta,
                alpha_cov: alphas[i].cov,
                wrench_cov: wrench_cov[i],
            };
            let estimate = DynamicUnknowns::from_vector(&filters[i].x)?;
            let sigma_x = filters[i].covariance().ok();
            let combined =
                build_combined_observation(&inputs, &noise, &estimate, sigma_x.as_ref())?;
            filters[i].update(&combined.obs)?;
        }

        // Optional parameter consensus through the estimated coordinate
        // changes: average (p_c homogeneous, I^S, 1/m) across the network.
        if let Some(net) = &param_net {
            let values: Vec<DVector<f64>> = (0..n)
                .map(|i| {
                    let x = &filters[i].x;
                    let mut v = DVector::zeros(11);
                    v[0] = x[0];
                    v[1] = x[1];
                    v[2] = x[2];
                    v[3] = 1.0;
                    for k in 0..6 {
                        v[4 + k] = x[3 + k];
                    }
                    v[10] = x[9];
                    v
                })
                .collect();
            let run = run_consensus(net, &values, cfg.consensus.tol, cfg.consensus.max_iters)?;
            for (filter, v) in filters.iter_mut().zip(&run.values) {
                let x = &mut filter.x;
                x[0] = v[0];
                x[1] = v[1];
                x[2] = v[2];
                for k in 0..6 {
                    x[3 + k] = v[4 + k];
                }
                x[9] = v[10];
            }
        }

        // Metrics against the identification truth captured with the snapshot.
        for i in 0..n {
            let est = DynamicUnknowns::from_vector(&filters[i].x)?;
            let isym_true = cur.truth.inertia_symvec[i];
            let mae = (0..6)
                .map(|k| (est.inertia[k] - isym_true[k]).abs())
                .sum::<f64>()
                / 6.0;
            let pc_err = (est.pc - cur.truth.com_in_sensor[i]).norm();
            let mass = est.mass();
            let mass_err = (mass - cur.truth.mass).abs();
            let mass_var = filters[i]
                .covariance()
                .map(|p| est.mass_variance(p[(9, 9)]))
                .unwrap_or(f64::NAN);
            let trace = &mut traces[i];
            trace.time.push(cur.t);
            trace.inertia_mae.push(mae);
            trace.pc_err.push(pc_err);
            trace.mass_est.push(mass);
            trace.mass_err.push(mass_err);
            for (name, value) in [
                ("inertia_mae", mae),
                ("pc_err", pc_err),
                ("mass_est", mass),
                ("mass_err", mass_err),
                ("mass_var", mass_var),
            ] {
                metrics.push(MetricsRecord {
                    time: cur.t,
                    entity: robot_entity(i),
                    metric: name,
                    value,
                });
            }
        }
    }

    let estimates = filters
        .iter()
        .map(|f| DynamicUnknowns::from_vector(&f.x))
        .collect::<Result<_>>()?;
    Ok(Phase2Result {
        traces,
        estimates,
        metrics,
    })
}

/// Full experiment: phase 1, then phase 2 driven by the estimated (or true)
/// poses over the same deterministic timeline.
pub struct FullResult {
    pub phase1: Phase1Result,
    pub phase2: Phase2Result,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub use_true_poses: bool,
    pub no_wrench_consensus: bool,
}

pub fn run_full(cfg: &ScenarioConfig, options: RunOptions) -> Result<FullResult> {
    let phase1 = run_phase1(cfg)?;
    let source = if options.use_true_poses {
        PoseSource::True
    } else {
        PoseSource::Estimated(&phase1)
    };
    let phase2 = run_phase2(
        cfg,
        source,
        Phase2Options {
            wrench_consensus: !options.no_wrench_consensus,
        },
    )?;
    Ok(FullResult { phase1, phase2 })
}
