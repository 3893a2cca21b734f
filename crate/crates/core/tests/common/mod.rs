//! Independent oracles shared by the integration tests and the acceptance
//! runner, plus the scripted maneuver both use. The oracles never call the
//! code paths they are used to check.
#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use trocar_core::arm_model::{
    angle_between, forward_kinematics, inverse_dynamics, link_frame, rotation_log, ArmModel, JointDescriptor, JointLimits, JointVector, LinkInertia,
    Pose,
};
use trocar_core::control::{control_tick, ControlMode, ControllerState, Gains, PedalState, TaskId};
use trocar_core::scene::Scene;
use trocar_core::trial::TaskSpec;
use trocar_core::trial::{FailureReason, TrialRecord};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_q(model: &ArmModel, rng: &mut ChaCha8Rng) -> JointVector {
    let l = &model.limits;
    JointVector::from_vec((0..model.dof()).map(|i| rng.random_range(l.lower[i]..l.upper[i])).collect())
}

pub fn random_rates(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> JointVector {
    JointVector::from_vec((0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

fn offset(q: &JointVector, i: usize, h: f64) -> JointVector {
    let mut v = q.clone();
    v[i] += h;
    v
}

/// Central-difference Jacobian of the tip pose: linear rows from positions,
/// angular rows from the relative rotation of the two perturbed poses.
pub fn fd_jacobian(model: &ArmModel, q: &JointVector, h: f64) -> DMatrix<f64> {
    let n = model.dof();
    let mut j = DMatrix::zeros(6, n);
    for i in 0..n {
        let a = forward_kinematics(model, &offset(q, i, h)).unwrap();
        let b = forward_kinematics(model, &offset(q, i, -h)).unwrap();
        let dp = (a.translation - b.translation) / (2.0 * h);
        let dr = rotation_log(&(a.rotation * b.rotation.transpose())) / (2.0 * h);
        for r in 0..3 {
            j[(r, i)] = dp[r];
            j[(r + 3, i)] = dr[r];
        }
    }
    j
}

/// Velocity of a point fixed to link `k` (1-based), by differentiating its
/// trajectory `q + t·qd` numerically.
fn point_velocity(model: &ArmModel, q: &JointVector, qd: &JointVector, k: usize, local: &Vector3<f64>, h: f64) -> Vector3<f64> {
    let at = |s: f64| {
        let qs = JointVector::from(q.as_dvector() + qd.as_dvector() * s);
        link_frame(model, &qs, k).unwrap().transform_point(local)
    };
    (at(h) - at(-h)) / (2.0 * h)
}

fn frame_angular_velocity(model: &ArmModel, q: &JointVector, qd: &JointVector, k: usize, h: f64) -> Vector3<f64> {
    let at = |s: f64| {
        let qs = JointVector::from(q.as_dvector() + qd.as_dvector() * s);
        link_frame(model, &qs, k).unwrap().rotation
    };
    rotation_log(&(at(h) * at(-h).transpose())) / (2.0 * h)
}

/// Kinetic energy from link frame motion alone.
pub fn kinetic_energy(model: &ArmModel, q: &JointVector, qd: &JointVector) -> f64 {
    let h = 1e-6;
    let mut t = 0.0;
    for (k, link) in model.link_inertias.iter().enumerate() {
        let frame = link_frame(model, q, k + 1).unwrap();
        let v = point_velocity(model, q, qd, k + 1, &link.com, h);
        let w = frame_angular_velocity(model, q, qd, k + 1, h);
        let inertia = frame.rotation * link.inertia * frame.rotation.transpose();
        t += 0.5 * link.mass * v.norm_squared() + 0.5 * w.dot(&(inertia * w));
    }
    t
}

/// Gravitational potential energy, zero at the base origin.
pub fn potential_energy(model: &ArmModel, q: &JointVector) -> f64 {
    model
        .link_inertias
        .iter()
        .enumerate()
        .map(|(k, link)| {
            let c = link_frame(model, q, k + 1).unwrap().transform_point(&link.com);
            -link.mass * model.gravity.dot(&c)
        })
        .sum()
}

/// Kinetic energy with link velocities summed over joint axes,
/// `v = Σ z_i × (c − p_i) q̇_i` and `ω = Σ z_i q̇_i`.
pub fn kinetic_energy_exact(model: &ArmModel, q: &JointVector, qd: &JointVector) -> f64 {
    let mut t = 0.0;
    let n = model.dof();
    let frames: Vec<Pose> = (0..=n).map(|k| link_frame(model, q, k).unwrap()).collect();
    // Joint k axis and origin in base coordinates.
    let axes: Vec<(Vector3<f64>, Vector3<f64>)> = (0..n)
        .map(|k| {
            let g = frames[k].compose(&model.joints[k].parent_transform);
            (g.translation, g.rotation * model.joints[k].axis)
        })
        .collect();
    for (k, link) in model.link_inertias.iter().enumerate() {
        let f = &frames[k + 1];
        let c = f.transform_point(&link.com);
        let mut v = Vector3::zeros();
        let mut w = Vector3::zeros();
        for (i, (p, z)) in axes.iter().enumerate().take(k + 1) {
            w += z * qd[i];
            v += z.cross(&(c - p)) * qd[i];
        }
        let inertia = f.rotation * link.inertia * f.rotation.transpose();
        t += 0.5 * link.mass * v.norm_squared() + 0.5 * w.dot(&(inertia * w));
    }
    t
}

/// `|qdᵀτ − dE/dt|` along the trajectory through `(q, qd)` with acceleration
/// `qdd`, the energy rate taken by central differences in time.
pub fn power_residual(model: &ArmModel, q: &JointVector, qd: &JointVector, qdd: &JointVector, tau: &[f64]) -> f64 {
    let h = 1e-5;
    let state = |s: f64| {
        let qs = q.as_dvector() + qd.as_dvector() * s + qdd.as_dvector() * (0.5 * s * s);
        let qds = qd.as_dvector() + qdd.as_dvector() * s;
        (JointVector::from(qs), JointVector::from(qds))
    };
    let energy = |s: f64| {
        let (qs, qds) = state(s);
        kinetic_energy_exact(model, &qs, &qds) + potential_energy(model, &qs)
    };
    let de = (energy(h) - energy(-h)) / (2.0 * h);
    let power: f64 = qd.iter().zip(tau).map(|(a, b)| a * b).sum();
    (power - de).abs()
}

/// A single revolute joint about x holding a point mass `length` along y.
pub fn horizontal_link(mass: f64, length: f64) -> ArmModel {
    ArmModel::new(
        vec![JointDescriptor::new(Pose::identity(), Vector3::x()).unwrap()],
        Pose::identity(),
        JointLimits::new(vec![-3.0], vec![3.0], vec![1.0]).unwrap(),
        vec![LinkInertia::point_mass(mass, Vector3::new(0.0, length, 0.0)).unwrap()],
        Vector3::new(0.0, 0.0, -9.81),
    )
    .unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random 6×7 matrix of rank `rank`.
pub fn random_jacobian(rank: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    random_matrix(6, rank, rng) * random_matrix(rank, 7, rng)
}

pub fn is_rotation(m: &Matrix3<f64>) -> bool {
    (m.transpose() * m - Matrix3::identity()).norm() < 1e-9
}

pub fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<TrialRecord> {
    (0..n)
        .map(|_| {
            let success = rng.random_bool(0.6);
            TrialRecord {
                task_id: TaskId::new(rng.random_range(1..=3)).unwrap(),
                participant_id: format!("p{}", rng.random_range(0..4)),
                attempt_index: rng.random_range(1..=4),
                seed: None,
                duration: rng.random_range(5.0..120.0),
                success,
                failure_reason: (!success).then_some(FailureReason::Timeout),
                collision_count: rng.random_range(0..3),
                camera_view_fraction: 0.0,
                event_log_ref: None,
                notes: String::new(),
            }
        })
        .collect()
}

/// Per-task statistics by direct two-pass arithmetic.
pub struct OracleRow {
    pub attempts: usize,
    pub successes: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub rate: u8,
    pub collisions: u64,
}

pub fn oracle_summary(records: &[TrialRecord], include_intro: bool, successes_only: bool) -> BTreeMap<u8, OracleRow> {
    let mut groups: BTreeMap<u8, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| include_intro || r.attempt_index > 1) {
        groups.entry(r.task_id.get()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(task, rs)| {
            let times: Vec<f64> = rs.iter().filter(|r| r.success || !successes_only).map(|r| r.duration).collect();
            let n = times.len();
            let mean = (n > 0).then(|| times.iter().sum::<f64>() / n as f64);
            let sd = (n > 1).then(|| {
                let m = mean.unwrap();
                (times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            let s = rs.iter().filter(|r| r.success).count();
            // Round half up on 100·s/n via floating point with an exact-tie check.
            let exact = 100.0 * s as f64 / rs.len() as f64;
            let rate = if (exact.fract() - 0.5).abs() < 1e-12 { exact.ceil() } else { exact.round() } as u8;
            (
                task,
                OracleRow {
                    attempts: rs.len(),
                    successes: s,
                    mean,
                    sd,
                    rate,
                    collisions: rs.iter().map(|r| r.collision_count as u64).sum(),
                },
            )
        })
        .collect()
}

/// Tip drift and orientation drift after `ticks` of full deflection on the
/// first pedal axis in `mode`.
pub fn maneuver(mode: ControlMode, ticks: usize) -> (f64, f64) {
    let model = ArmModel::default_profile();
    let scene = Scene::default();
    let (model, start) =
        trocar_core::sim::initial_state(&model, &scene, &TaskSpec::for_task(TaskId::HYBRID), 0).unwrap();
    let gains = Gains {
        pedal_angular_scale: 0.2,
        ..Gains::default()
    };
    let mut ctrl = ControllerState::new(gains);
    let mut q = start.q.clone();
    let zero = JointVector::zeros(7);
    let tau = inverse_dynamics(&model, &q, &zero, &zero, &model.gravity).unwrap();
    let p0 = forward_kinematics(&model, &q).unwrap();
    // Enter translational, then toggle into rotational if asked.
    let mut script = vec![PedalState::held()];
    if mode == ControlMode::TeleopRotational {
        script.push(PedalState::new([true, true, false, false], [0.0, 0.0], 0.0));
        script.push(PedalState::held());
    }
    for p in script {
        let (c, cmd) = control_tick(&ctrl, &model, &q, &zero, &p, &tau, TaskId::HYBRID, 0.01).unwrap();
        assert_eq!(cmd.dq, zero);
        ctrl = c;
    }
    assert_eq!(ctrl.mode, mode);
    let push = PedalState::new([true, false, false, false], [1.0, 0.0], 0.0);
    for _ in 0..ticks {
        let (c, cmd) = control_tick(&ctrl, &model, &q, &zero, &push, &tau, TaskId::HYBRID, 0.01).unwrap();
        ctrl = c;
        for i in 0..7 {
            q[i] += cmd.dq[i] * 0.01;
        }
    }
    let p1: Pose = forward_kinematics(&model, &q).unwrap();
    let rel = p0.rotation.transpose() * p1.rotation;
    let angle = angle_between(&p0.z_axis(), &p1.z_axis()).max(trocar_core::arm_model::rotation_log(&rel).norm());
    ((p1.translation - p0.translation).norm(), angle)
}
