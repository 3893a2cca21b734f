//! Fixed-step kinematic simulation: torque synthesis, the control tick,
//! Euler integration of joint rates and per-tick scene evaluation.

mod operator;
mod run;
mod session;

pub use operator::{
    build_operator, Action, CorneaStrikeParams, DockingParams, DockingPolicy, HandGuide, HandGuideParams,
    IdlePolicy, Observation, Operator, PolicyParams, ScleraPressParams, TargetPolicy,
};
pub use run::{initial_state, run_trial, start_tip_pose, TrialDriver, TrialRun, VIRTUAL_PARTICIPANT};
pub use session::{read_session, replay_session, state_hash, Recorder, Replay, SessionEntry, SessionHeader};

use crate::arm_model::{
    forward_kinematics, link_frame, point_jacobian, rotation_log, clamp_to_limits, ArmModel, JointVector,
    Pose, RefPoint, TorqueVector, Wrench, inverse_dynamics,
};
use crate::control::{control_tick, ControlEvent, ControlMode, ControllerState, PedalState, TaskId, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::scene::{
    detect_contacts, docking_status, extrude, ContactKind, ContactTracker, DockingReport, DockingStatus,
    ExtrusionOutcome, Scene, ToolState,
};
use nalgebra::{DVector, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// s
    pub dt: f64,
    /// s
    pub max_duration: f64,
    pub seed: u64,
    /// Std of additive gaussian torque noise, N·m.
    pub torque_noise_std: f64,
    /// Std of additive gaussian noise on pedal axes.
    pub pedal_noise_std: f64,
    /// Joint commands are applied this many ticks late.
    pub command_delay_ticks: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: DEFAULT_DT,
            max_duration: 120.0,
            seed: 0,
            torque_noise_std: 0.0,
            pedal_noise_std: 0.0,
            command_delay_ticks: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.max_duration > 0.0) {
            return Err(Error::invalid("sim config", "dt and max_duration must be positive"));
        }
        if !(self.torque_noise_std >= 0.0) || !(self.pedal_noise_std >= 0.0) {
            return Err(Error::invalid("sim config", "noise levels must be non-negative"));
        }
        Ok(())
    }
}

/// Something that happened during a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SimEvent {
    ModeChanged {
        from: ControlMode,
        to: ControlMode,
    },
    /// Emitted when the set of limited joints changes to a non-empty set.
    JointLimit {
        position_joints: Vec<usize>,
        velocity_joints: Vec<usize>,
    },
    /// First tick of a contact episode.
    Contact {
        contact_kind: ContactKind,
        penetration: f64,
    },
    /// Scleral penetration crossed the phantom's deformation threshold.
    DeformationExceeded {
        penetration: f64,
    },
    Docking {
        status: DockingStatus,
    },
    /// Only terminal outcomes are logged.
    Extrusion {
        outcome: ExtrusionOutcome,
    },
    OperatorAbort,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub tick: u64,
    /// s
    pub time: f64,
    #[serde(flatten)]
    pub event: SimEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub tick: u64,
    /// `tick · dt`, s.
    pub time: f64,
    pub q: JointVector,
    /// Rates applied over the last tick, rad/s.
    pub dq: JointVector,
    pub mode: ControlMode,
    pub tool: ToolState,
    pub docking: DockingReport,
    /// Events raised by the last tick.
    pub pending_events: Vec<LoggedEvent>,
    pub rng: ChaCha8Rng,
    pub contacts: ContactTracker,
    /// Scleral penetration currently above threshold.
    pub deforming: bool,
    /// Joint sets of the last limit event, to report changes only.
    pub limited: (Vec<usize>, Vec<usize>),
    /// Commands waiting out the configured delay.
    pub delayed: VecDeque<JointVector>,
}

impl SimState {
    /// State at rest at `q` with the rod retracted.
    pub fn at_rest(model: &ArmModel, scene: &Scene, q: JointVector, seed: u64) -> Result<SimState> {
        let tip = forward_kinematics(model, &q)?;
        let tool = scene.tool_at(tip);
        let docking = docking_status(&tool, &scene.trocar);
        Ok(SimState {
            tick: 0,
            time: 0.0,
            dq: JointVector::zeros(q.len()),
            q,
            mode: ControlMode::Hold,
            tool,
            docking,
            pending_events: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            contacts: ContactTracker::default(),
            deforming: false,
            limited: (Vec::new(), Vec::new()),
            delayed: VecDeque::new(),
        })
    }
}

/// Spring–damper stand-in for the operator's hand on the arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanHandModel {
    /// Link the hand holds, 1..=N.
    pub grasp_link: usize,
    /// Grasp frame relative to the link frame.
    pub grasp_offset: Pose,
    /// Where the hand wants the grasp frame to be.
    pub target_pose: Pose,
    /// N/m ×3, N·m/rad ×3.
    pub stiffness: [f64; 6],
    /// N·s/m ×3, N·m·s/rad ×3.
    pub damping: [f64; 6],
    /// Cap on the force magnitude, N.
    pub max_force: f64,
}

impl HumanHandModel {
    /// Hand holding the instrument at its tip.
    pub fn at_tip(model: &ArmModel, target_pose: Pose, stiffness: [f64; 6], damping: [f64; 6], max_force: f64) -> Self {
        HumanHandModel {
            grasp_link: model.dof(),
            grasp_offset: model.tool_transform,
            target_pose,
            stiffness,
            damping,
            max_force,
        }
    }

    pub fn validate(&self, model: &ArmModel) -> Result<()> {
        if self.grasp_link == 0 || self.grasp_link > model.dof() {
            return Err(Error::IndexOutOfRange {
                what: "grasp link",
                index: self.grasp_link,
                max: model.dof(),
            });
        }
        if self.stiffness.iter().chain(&self.damping).any(|v| !(*v >= 0.0)) || !(self.max_force > 0.0) {
            return Err(Error::invalid("hand model", "gains must be non-negative and max_force positive"));
        }
        Ok(())
    }

    /// Grasp-point Jacobian (6×N, base frame) at `q`.
    pub fn jacobian(&self, model: &ArmModel, q: &JointVector) -> Result<nalgebra::DMatrix<f64>> {
        point_jacobian(model, q, self.grasp_link, &self.grasp_offset.translation)
    }

    /// Wrench the hand applies at the grasp point, and the grasp Jacobian.
    pub fn wrench(&self, model: &ArmModel, q: &JointVector, dq: &JointVector) -> Result<(Wrench, nalgebra::DMatrix<f64>)> {
        let frame = link_frame(model, q, self.grasp_link)?.compose(&self.grasp_offset);
        let j = self.jacobian(model, q)?;
        let v = &j * dq.as_dvector();
        let ep = self.target_pose.translation - frame.translation;
        let er = rotation_log(&(self.target_pose.rotation * frame.rotation.transpose()));
        let k = &self.stiffness;
        let d = &self.damping;
        let mut force = Vector3::new(
            k[0] * ep.x - d[0] * v[0],
            k[1] * ep.y - d[1] * v[1],
            k[2] * ep.z - d[2] * v[2],
        );
        let torque = Vector3::new(
            k[3] * er.x - d[3] * v[3],
            k[4] * er.y - d[4] * v[4],
            k[5] * er.z - d[5] * v[5],
        );
        let norm = force.norm();
        if norm > self.max_force {
            force *= self.max_force / norm;
        }
        Ok((
            Wrench {
                force,
                torque,
                reference_point: RefPoint::Tip,
            },
            j,
        ))
    }
}

/// Joint torques the arm's sensors would report: the model torques for the
/// current motion, plus the hand's load and sensor noise.
pub fn simulate_measured_torques(
    model: &ArmModel,
    state: &mut SimState,
    hand: Option<&HumanHandModel>,
    cfg: &SimConfig,
) -> Result<TorqueVector> {
    let n = model.dof();
    let zero = JointVector::zeros(n);
    let mut tau: DVector<f64> = inverse_dynamics(model, &state.q, &state.dq, &zero, &model.gravity)?.into_dvector();
    if let Some(hand) = hand {
        let (w, j) = hand.wrench(model, &state.q, &state.dq)?;
        let w: Vector6<f64> = w.to_vector6();
        tau += j.transpose() * DVector::from_column_slice(w.as_slice());
    }
    if cfg.torque_noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.torque_noise_std).map_err(|e| Error::invalid("sim config", e.to_string()))?;
        for v in tau.iter_mut() {
            *v += normal.sample(&mut state.rng);
        }
    }
    Ok(TorqueVector::from(tau))
}

fn noisy_pedal(pedal: &PedalState, state: &mut SimState, cfg: &SimConfig) -> Result<PedalState> {
    if cfg.pedal_noise_std <= 0.0 {
        return Ok(*pedal);
    }
    let normal = Normal::new(0.0, cfg.pedal_noise_std).map_err(|e| Error::invalid("sim config", e.to_string()))?;
    let mut axes = [pedal.joystick[0], pedal.joystick[1], pedal.rocker];
    for a in axes.iter_mut() {
        *a += normal.sample(&mut state.rng);
    }
    Ok(PedalState::new(pedal.buttons, [axes[0], axes[1]], axes[2]))
}

/// Everything a tick needs besides the evolving state.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub model: &'a ArmModel,
    pub scene: &'a Scene,
    pub task: TaskId,
    pub cfg: &'a SimConfig,
}

/// Advance one command period.
pub fn sim_step(
    state: &SimState,
    controller: &ControllerState,
    inputs: &PedalState,
    hand: Option<&HumanHandModel>,
    ctx: &StepContext<'_>,
) -> Result<(SimState, ControllerState)> {
    let StepContext { model, scene, task, cfg } = *ctx;
    let dt = cfg.dt;
    let mut next = state.clone();
    next.pending_events.clear();

    let tau = simulate_measured_torques(model, &mut next, hand, cfg)?;
    let pedal = noisy_pedal(inputs, &mut next, cfg)?;
    let (ctrl, cmd) = control_tick(controller, model, &state.q, &state.dq, &pedal, &tau, task, dt)?;

    let dq = if cfg.command_delay_ticks == 0 {
        cmd.dq.clone()
    } else {
        next.delayed.push_back(cmd.dq.clone());
        let due = if next.delayed.len() > cfg.command_delay_ticks {
            next.delayed.pop_front().expect("non-empty queue")
        } else {
            JointVector::zeros(model.dof())
        };
        clamp_to_limits(&state.q, &due, &model.limits, dt).0
    };
    for i in 0..dq.len() {
        next.q[i] = (state.q[i] + dq[i] * dt).clamp(model.limits.lower[i], model.limits.upper[i]);
    }
    next.dq = dq;
    next.mode = ctrl.mode;
    next.tick = state.tick + 1;
    next.time = next.tick as f64 * dt;
    let (tick, time) = (next.tick, next.time);
    let mut log = |event: SimEvent| next.pending_events.push(LoggedEvent { tick, time, event });

    let mut limited = (Vec::new(), Vec::new());
    for e in &cmd.events {
        match e {
            ControlEvent::ModeChanged { from, to } => log(SimEvent::ModeChanged { from: *from, to: *to }),
            ControlEvent::Limit(l) => limited = (l.position_joints.clone(), l.velocity_joints.clone()),
        }
    }
    if limited != next.limited {
        if !limited.0.is_empty() || !limited.1.is_empty() {
            log(SimEvent::JointLimit {
                position_joints: limited.0.clone(),
                velocity_joints: limited.1.clone(),
            });
        }
        next.limited = limited;
    }

    next.tool.tip_pose = forward_kinematics(model, &next.q)?;
    if pedal.deadman() && pedal.complete() {
        let (tool, outcome) = extrude(&next.tool, scene.rod.extrusion_rate, dt, &scene.trocar, &scene.phantom);
        next.tool = tool;
        if outcome != ExtrusionOutcome::Advancing {
            log(SimEvent::Extrusion { outcome });
        }
    }

    let contacts = detect_contacts(&next.tool, &scene.phantom, &scene.trocar, time);
    for c in next.contacts.observe(&contacts) {
        log(SimEvent::Contact {
            contact_kind: c.kind,
            penetration: c.penetration,
        });
    }
    let deepest = contacts
        .iter()
        .filter(|c| c.kind == ContactKind::ScleraDeformation)
        .map(|c| c.penetration)
        .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))));
    let deforming = deepest.is_some_and(|p| p > scene.phantom.deform_threshold);
    if deforming && !next.deforming {
        log(SimEvent::DeformationExceeded {
            penetration: deepest.unwrap_or_default(),
        });
    }
    next.deforming = deforming;

    let docking = docking_status(&next.tool, &scene.trocar);
    if docking.status != state.docking.status {
        log(SimEvent::Docking { status: docking.status });
    }
    next.docking = docking;
    Ok((next, ctrl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm_model::geometric_jacobian;
    use crate::control::Gains;

    fn setup() -> (ArmModel, Scene, SimState) {
        let model = ArmModel::default_profile();
        let scene = Scene::default();
        let state = SimState::at_rest(&model, &scene, model.home.clone(), 1).unwrap();
        (model, scene, state)
    }

    #[test]
    fn hold_only_advances_time() {
        let (model, scene, state) = setup();
        let cfg = SimConfig::default();
        let ctx = StepContext { model: &model, scene: &scene, task: TaskId::HYBRID, cfg: &cfg };
        let ctrl = ControllerState::new(Gains::default());
        let (next, _) = sim_step(&state, &ctrl, &PedalState::default(), None, &ctx).unwrap();
        assert_eq!(next.q, state.q);
        assert_eq!(next.tool, state.tool);
        assert_eq!(next.tick, 1);
        assert_eq!(next.time, 0.01);
        assert!(next.pending_events.is_empty());
    }

    #[test]
    fn no_hand_no_noise_measures_model_torques() {
        let (model, _, mut state) = setup();
        state.dq = JointVector::from_vec(vec![0.1, -0.2, 0.05, 0.3, 0.0, 0.1, -0.1]);
        let tau = simulate_measured_torques(&model, &mut state, None, &SimConfig::default()).unwrap();
        let zero = JointVector::zeros(7);
        let model_tau = inverse_dynamics(&model, &state.q, &state.dq, &zero, &model.gravity).unwrap();
        assert_eq!(tau, model_tau);
    }

    #[test]
    fn spring_hand_force_is_recovered_at_the_tip() {
        let (model, _, mut state) = setup();
        let tip = forward_kinematics(&model, &state.q).unwrap();
        let mut target = tip;
        target.translation.x += 0.1;
        let hand = HumanHandModel::at_tip(&model, target, [50.0, 50.0, 50.0, 1.0, 1.0, 1.0], [0.0; 6], 20.0);
        let (w, _) = hand.wrench(&model, &state.q, &state.dq).unwrap();
        assert!((w.force - Vector3::new(5.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(w.torque.norm() < 1e-12);
        let tau = simulate_measured_torques(&model, &mut state, Some(&hand), &SimConfig::default()).unwrap();
        let zero = JointVector::zeros(7);
        let model_tau = inverse_dynamics(&model, &state.q, &state.dq, &zero, &model.gravity).unwrap();
        let j = geometric_jacobian(&model, &state.q, RefPoint::Tip).unwrap();
        let est = crate::arm_model::estimate_external_wrench(&j, &tau, &model_tau, 0.0).unwrap();
        assert!((est.force - Vector3::new(5.0, 0.0, 0.0)).norm() < 1e-6, "{:?}", est.force);
        assert!(est.torque.norm() < 1e-6);
    }

    #[test]
    fn hand_force_saturates() {
        let (model, _, state) = setup();
        let tip = forward_kinematics(&model, &state.q).unwrap();
        let mut target = tip;
        target.translation.y -= 1.0;
        let hand = HumanHandModel::at_tip(&model, target, [100.0, 100.0, 100.0, 0.0, 0.0, 0.0], [0.0; 6], 20.0);
        let (w, _) = hand.wrench(&model, &state.q, &state.dq).unwrap();
        assert!((w.force.norm() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn torque_noise_is_seeded() {
        let (model, _, state) = setup();
        let cfg = SimConfig {
            torque_noise_std: 0.05,
            ..SimConfig::default()
        };
        let (mut a, mut b) = (state.clone(), state.clone());
        let ta = simulate_measured_torques(&model, &mut a, None, &cfg).unwrap();
        let tb = simulate_measured_torques(&model, &mut b, None, &cfg).unwrap();
        assert_eq!(ta, tb);
        let tc = simulate_measured_torques(&model, &mut a, None, &cfg).unwrap();
        assert_ne!(ta, tc);
    }

    #[test]
    fn command_delay_shifts_motion() {
        let (model, scene, state) = setup();
        let ctrl = ControllerState::new(Gains::default());
        let pedal = PedalState::new([true, false, false, false], [1.0, 0.0], 0.0);
        let cfg = SimConfig {
            command_delay_ticks: 3,
            ..SimConfig::default()
        };
        let ctx = StepContext { model: &model, scene: &scene, task: TaskId::HYBRID, cfg: &cfg };
        let (mut s, mut c) = (state.clone(), ctrl);
        for _ in 0..3 {
            (s, c) = sim_step(&s, &c, &pedal, None, &ctx).unwrap();
            assert_eq!(s.q, state.q);
        }
        (s, _) = sim_step(&s, &c, &pedal, None, &ctx).unwrap();
        assert_ne!(s.q, state.q);
    }
}
