//! Cross-module consistency oracles: the simulator's synthesized readings
//! must satisfy the observation models' algebra exactly, and the combined
//! model must agree with the stacked individual models.

use nalgebra::{DMatrix, DVector, Matrix4, Vector3};

use coop_ident::dq::UnitDualQuat;
use coop_ident::driver::{run_full, RunOptions};
use coop_ident::filter::DqPoseFilter;
use coop_ident::linalg::symmetric_eigen;
use coop_ident::obs::{
    build_combined_observation, build_inertia_regressor, build_pc_observation,
    build_pose_observation, CombinedInputs, CombinedNoise, DynamicUnknowns,
};
use coop_ident::scenario::ScenarioConfig;
use coop_ident::se3::{Twist, Wrench};
use coop_ident::sim::{
    gravity_hold_share, inertia_to_symvec, sensor_kinematics, step_dynamics, wrench_at_com,
    ContactLayout, RigidBodyState,
};

/// One noiseless sensor instant of the default scenario: per-robot inputs to
/// the combined model plus the matching per-robot truth.
struct TruthStep {
    inputs: Vec<CombinedInputs>,
    unknowns: Vec<DynamicUnknowns>,
    twists: Vec<Twist>,
}

fn simulate_truth_steps(cfg: &ScenarioConfig, n_steps: usize) -> Vec<TruthStep> {
    let params = cfg.params.to_params().unwrap();
    let layout_ref = cfg.contact_poses();
    let layout = ContactLayout::from_reference(&layout_ref, &params.com);
    let gravity = Vector3::from_column_slice(&cfg.gravity);
    let profile = cfg.wrench.profile();
    let n = cfg.robots;

    let mut state = RigidBodyState::at_rest();
    let mut out = Vec::new();
    for step in 1..=(n_steps * cfg.sensor_every) {
        let t = (step - 1) as f64 * cfg.dt;
        let applied: Vec<Wrench> = (0..n)
            .map(|i| {
                let mut w = profile.evaluate(t, i);
                if cfg.wrench.gravity_compensation {
                    w = w + gravity_hold_share(&state, &layout, i, params.mass, &gravity, n);
                }
                w
            })
            .collect();
        let wrench_com = wrench_at_com(&layout, &applied);
        state = step_dynamics(&state, &params, &wrench_com, &gravity, cfg.dt).unwrap();
        if step % cfg.sensor_every != 0 {
            continue;
        }

        let t = step as f64 * cfg.dt;
        let applied: Vec<Wrench> = (0..n)
            .map(|i| {
                let mut w = profile.evaluate(t, i);
                if cfg.wrench.gravity_compensation {
                    w = w + gravity_hold_share(&state, &layout, i, params.mass, &gravity, n);
                }
                w
            })
            .collect();
        let wrench_com = wrench_at_com(&layout, &applied);
        let kin = sensor_kinematics(&state, &layout, &params, &wrench_com, &gravity).unwrap();

        // Centralized total wrench at every robot from the true poses.
        let totals: Vec<Wrench> = (0..n)
            .map(|i| {
                let mut sum = nalgebra::Vector6::<f64>::zeros();
                for (j, w) in applied.iter().enumerate() {
                    let g_ji = layout.relative_pose(j, i);
                    sum += g_ji.adjoint().transpose() * w.as_vector();
                }
                Wrench::from_vector(&sum)
            })
            .collect();

        let inputs = (0..n)
            .map(|i| CombinedInputs {
                omega: kin[i].twist.omega,
                vel: kin[i].twist.vel,
                abar: kin[i].abar,
                alpha: kin[i].alpha,
                total_force: totals[i].force,
                total_torque: totals[i].torque,
            })
            .collect();
        let unknowns = (0..n)
            .map(|i| {
                let r_ic = layout.poses[i].rot.transpose();
                DynamicUnknowns::new(
                    layout.com_in_sensor(i),
                    inertia_to_symvec(&(r_ic * params.inertia * r_ic.transpose())),
                    1.0 / params.mass,
                )
            })
            .collect();
        out.push(TruthStep {
            inputs,
            unknowns,
            twists: kin.iter().map(|k| k.twist).collect(),
        });
    }
    out
}

#[test]
fn synthesized_readings_satisfy_combined_model_exactly() {
    let cfg = ScenarioConfig::default();
    let steps = simulate_truth_steps(&cfg, 300);
    let mut worst = 0.0_f64;
    for step in &steps {
        for (inp, unk) in step.inputs.iter().zip(&step.unknowns) {
            let c = build_combined_observation(inp, &CombinedNoise::exact(), unk, None).unwrap();
            let res = (&c.obs.h * unk.to_vector() - &c.obs.y).norm();
            worst = worst.max(res);
        }
    }
    assert!(
        worst < 1e-8,
        "worst combined-model residual on simulator truth: {worst:.3e}"
    );
}

#[test]
fn pose_observation_annihilates_truth_along_trajectory() {
    let cfg = ScenarioConfig::default();
    let layout = cfg.contact_poses();
    let steps = simulate_truth_steps(&cfg, 100);
    let mut worst = 0.0_f64;
    for step in &steps {
        for &(a, b) in &cfg.edges {
            let g_ba = layout[b].inverse().compose(&layout[a]);
            let x = UnitDualQuat::from_pose(&g_ba);
            let obs = build_pose_observation(&step.twists[a], &step.twists[b]);
            worst = worst.max((obs.stacked_h() * x.inner().as_vector()).norm());
        }
    }
    assert!(
        worst < 1e-10,
        "worst pose pseudo-observation residual: {worst:.3e}"
    );
}

#[test]
fn combined_model_matches_stacked_individual_models_in_batch() {
    // Solving the stacked individual observations (mass-center rows, torque
    // rows assembled from the inertia regressor, and the inverse-mass form of
    // the force rows) must give the same least-squares solution as the
    // combined model on the same noiseless batch.
    let cfg = ScenarioConfig::default();
    let steps = simulate_truth_steps(&cfg, 120);
    let robot = 2;

    let dim = DynamicUnknowns::DIM;
    let mut combined_ata = DMatrix::<f64>::zeros(dim, dim);
    let mut combined_atb = DVector::<f64>::zeros(dim);
    let mut stacked_ata = DMatrix::<f64>::zeros(dim, dim);
    let mut stacked_atb = DVector::<f64>::zeros(dim);

    for step in &steps {
        let inp = &step.inputs[robot];
        let unk = &step.unknowns[robot];
        let c = build_combined_observation(inp, &CombinedNoise::exact(), unk, None).unwrap();
        combined_ata += c.obs.h.transpose() * &c.obs.h;
        combined_atb += c.obs.h.transpose() * &c.obs.y;

        // Individual mass-center rows.
        let pc = build_pc_observation(
            &inp.total_force,
            &inp.alpha,
            &inp.omega,
            &inp.vel,
            &inp.abar,
            0.0,
        )
        .unwrap();
        let mut h = DMatrix::<f64>::zeros(2, dim);
        h.view_mut((0, 0), (2, 3)).copy_from(&pc.h);
        stacked_ata += h.transpose() * &h;
        stacked_atb += h.transpose() * &pc.y;

        // Torque rows from the inertia regressor: [−F×, H_I, 0] x = T.
        let h_i = build_inertia_regressor(&inp.omega, &inp.alpha);
        let neg_fx = -coop_ident::linalg::skew(&inp.total_force);
        let mut h = DMatrix::<f64>::zeros(3, dim);
        for r in 0..3 {
            for cix in 0..3 {
                h[(r, cix)] = neg_fx[(r, cix)];
            }
            for cix in 0..6 {
                h[(r, 3 + cix)] = h_i[(r, cix)];
            }
        }
        let y = DVector::from_iterator(3, inp.total_torque.iter().copied());
        stacked_ata += h.transpose() * &h;
        stacked_atb += h.transpose() * &y;

        // Force rows in the inverse-mass parameterization.
        let motion = coop_ident::linalg::skew(&inp.alpha)
            + coop_ident::linalg::skew(&inp.omega) * coop_ident::linalg::skew(&inp.omega);
        let mut h = DMatrix::<f64>::zeros(3, dim);
        for r in 0..3 {
            for cix in 0..3 {
                h[(r, cix)] = -motion[(r, cix)];
            }
            h[(r, 9)] = inp.total_force[r];
        }
        let y = DVector::from_iterator(3, (inp.omega.cross(&inp.vel) + inp.abar).iter().copied());
        stacked_ata += h.transpose() * &h;
        stacked_atb += h.transpose() * &y;
    }

    let x_combined = combined_ata.lu().solve(&combined_atb).unwrap();
    let x_stacked = stacked_ata.lu().solve(&stacked_atb).unwrap();
    let diff = (&x_combined - &x_stacked).norm();
    assert!(diff < 1e-8, "batch solutions differ by {diff:.3e}");

    let truth = steps[0].unknowns[robot].to_vector();
    assert!(
        (&x_combined - &truth).norm() < 1e-6,
        "batch solution off truth by {:.3e}",
        (&x_combined - truth).norm()
    );
}

#[test]
fn excitation_gramian_reaches_full_rank_over_one_period() {
    // The accumulated combined-model Gramian Σ H_Dᵀ H_D over one profile
    // period must have full rank 10: the default excitation is persistent.
    let cfg = ScenarioConfig {
        sensor_every: 20,
        ..Default::default()
    };
    let period = cfg.wrench.profile().period();
    let steps_per_period = (period / cfg.sensor_dt()).ceil() as usize;
    let steps = simulate_truth_steps(&cfg, steps_per_period);
    let robot = 0;
    let mut gram = DMatrix::<f64>::zeros(DynamicUnknowns::DIM, DynamicUnknowns::DIM);
    for step in &steps {
        let c = build_combined_observation(
            &step.inputs[robot],
            &CombinedNoise::exact(),
            &step.unknowns[robot],
            None,
        )
        .unwrap();
        gram += c.obs.h.transpose() * &c.obs.h;
    }
    let eig = symmetric_eigen(&gram).unwrap();
    let ratio = eig.eigenvalues[0] / eig.eigenvalues[DynamicUnknowns::DIM - 1];
    assert!(
        eig.eigenvalues[0] > 0.0 && ratio > 1e-8,
        "Gramian nearly singular: spectrum {:?}",
        eig.eigenvalues.as_slice()
    );
}

#[test]
fn constant_axis_rotation_flags_insufficient_excitation() {
    // Twists whose angular velocity never leaves one axis cannot determine
    // the rotation: the filter must keep reporting a minimum-eigenvalue tie.
    let g_true = coop_ident::se3::Pose::from_axis_angle(
        Vector3::new(0.3, 1.0, -0.2),
        0.9,
        Vector3::new(0.4, -0.1, 0.7),
    );
    let mut filter = DqPoseFilter::new(1.0).unwrap();
    let r = Matrix4::identity();
    let mut tie_every_step = true;
    for k in 0..200 {
        let t = k as f64 * 0.01;
        let xi_i = Twist::new(
            Vector3::z() * (1.0 + 0.8 * (2.0 * t).sin()),
            Vector3::new(0.3 * (1.1 * t).sin(), -0.2, 0.1 * t.cos()),
        );
        let xi_j = g_true.transform_twist(&xi_i);
        filter
            .update(&build_pose_observation(&xi_i, &xi_j), &r)
            .unwrap();
        tie_every_step &= filter.tie_detected;
    }
    assert!(
        tie_every_step,
        "constant-axis rotation should keep the eigenvalue tie flagged"
    );
    assert!(filter.rotation_eigengap() < 0.5);
}

#[test]
fn unit_forgetting_factor_fails_to_readapt_after_load_change() {
    // Control run: with λ = 1 the filter never discounts the 27 s of data
    // from the original payload, so 15 s after the change the estimates are
    // still far from the new parameters — the forgetting factor is what makes
    // re-identification work.
    let mut cfg = ScenarioConfig::default_adaptive();
    cfg.lambda = 1.0;
    cfg.seed = 1;
    let control = run_full(&cfg, RunOptions::default()).unwrap();
    let p = control.phase2.mean_errors_at(50.0).unwrap();
    assert!(
        p.mass_err > 0.06 * 1.2 || p.inertia_mae > 0.10 || p.pc_err > 0.03,
        "λ = 1 run unexpectedly re-converged: {p:?}"
    );

    let mut cfg = ScenarioConfig::default_adaptive();
    cfg.seed = 1;
    let forgetting = run_full(&cfg, RunOptions::default()).unwrap();
    let q = forgetting.phase2.mean_errors_at(50.0).unwrap();
    assert!(
        q.mass_err < p.mass_err && q.inertia_mae < p.inertia_mae,
        "forgetting run ({q:?}) does not beat the λ = 1 control ({p:?})"
    );
}

#[test]
fn traces_identical_until_the_change_event() {
    // The same seed with and without a change event must produce bit-equal
    // metrics for every step before the event fires.
    let mut with_event = ScenarioConfig::default_adaptive();
    with_event.phase2_duration = 29.0; // end at 37 s, event at 35 s
    with_event.seed = 9;
    let mut without_event = with_event.clone();
    without_event.change_events.clear();

    let a = run_full(&with_event, RunOptions::default()).unwrap();
    let b = run_full(&without_event, RunOptions::default()).unwrap();
    let cut = 35.0 - 1e-9;
    let before = |metrics: &[coop_ident::driver::MetricsRecord]| -> Vec<(String, u64)> {
        metrics
            .iter()
            .filter(|m| m.time < cut)
            .map(|m| {
                (
                    format!("{}:{}:{}", m.time, m.entity, m.metric),
                    m.value.to_bits(),
                )
            })
            .collect()
    };
    let aa = before(&a.phase2.metrics);
    let bb = before(&b.phase2.metrics);
    assert_eq!(aa.len(), bb.len());
    for (x, y) in aa.iter().zip(&bb) {
        assert_eq!(x.0, y.0);
        assert_eq!(x.1, y.1, "metric {} diverged before the event", x.0);
    }
}

#[test]
fn separate_phases_reproduce_the_combined_run() {
    // Running phase 1 and phase 2 as separate calls must give the same
    // numbers as the combined driver (identical noise stream positions).
    // One second of noisy phase 1 is below the default convergence gate;
    // this test is about noise-stream alignment, not pose quality.
    let cfg = ScenarioConfig {
        phase1_duration: 1.0,
        phase2_duration: 1.0,
        seed: 5,
        pose_gap_threshold: 0.01,
        ..Default::default()
    };
    let full = run_full(&cfg, RunOptions::default()).unwrap();

    let phase1 = coop_ident::driver::run_phase1(&cfg).unwrap();
    let phase2 = coop_ident::driver::run_phase2(
        &cfg,
        coop_ident::driver::PoseSource::Estimated(&phase1),
        coop_ident::driver::Phase2Options::default(),
    )
    .unwrap();
    assert_eq!(full.phase2.metrics.len(), phase2.metrics.len());
    for (a, b) in full.phase2.metrics.iter().zip(&phase2.metrics) {
        assert_eq!(
            a.value.to_bits(),
            b.value.to_bits(),
            "{} diverged",
            a.metric
        );
    }
}
