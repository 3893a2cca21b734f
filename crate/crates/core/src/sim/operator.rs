//! Scripted operators for headless trials.

use super::{HumanHandModel, SimState};
use crate::arm_model::{axis_angle_matrix, rotation_log, ArmModel, Pose};
use crate::control::{ControlMode, Gains, PedalState, TaskId};
use crate::error::{Error, Result};
use crate::scene::{DockingStatus, Scene};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// What an operator sees before each tick.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub state: &'a SimState,
    pub scene: &'a Scene,
    pub model: &'a ArmModel,
    pub gains: &'a Gains,
    pub task: TaskId,
}

/// Operator input for one tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub pedal: PedalState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand: Option<HumanHandModel>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub abort: bool,
    /// Camera inset shown during this tick.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub camera_inset: bool,
}

impl Action {
    fn pedal(pedal: PedalState) -> Self {
        Action {
            pedal,
            ..Action::default()
        }
    }

    fn abort() -> Self {
        Action {
            abort: true,
            ..Action::default()
        }
    }
}

/// A deterministic policy: the same observation sequence yields the same actions.
pub trait Operator: Send {
    fn act(&mut self, obs: &Observation<'_>) -> Action;
}

fn pedal_with_axes(mode_toggle: bool, complete: bool, axes: Vector3<f64>) -> PedalState {
    PedalState::new([true, mode_toggle, false, complete], [axes.x, axes.y], axes.z)
}

fn mapping(m: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    )
}

/// Pedal axes that realize a base-frame vector `v` (m/s or rad/s) through
/// the tip frame and axis mapping, scaled so no axis exceeds full deflection.
fn axes_for(v: &Vector3<f64>, tip: &Pose, map: &[[f64; 3]; 3], scale: f64) -> Vector3<f64> {
    let local = tip.rotation.transpose() * v / scale;
    let raw = mapping(map).try_inverse().map_or(local, |inv| inv * local);
    let peak = raw.amax();
    if peak > 1.0 {
        raw / peak
    } else {
        raw
    }
}

fn translational_axes(v: &Vector3<f64>, obs: &Observation<'_>) -> Vector3<f64> {
    axes_for(
        v,
        &obs.state.tool.tip_pose,
        &obs.gains.axis_mapping.translational,
        obs.gains.pedal_linear_scale,
    )
}

fn rotational_axes(w: &Vector3<f64>, obs: &Observation<'_>) -> Vector3<f64> {
    axes_for(
        w,
        &obs.state.tool.tip_pose,
        &obs.gains.axis_mapping.rotational,
        obs.gains.pedal_angular_scale,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DockingParams {
    /// Switch to rotation above this rod-to-lumen angle, rad.
    pub angle_gate: f64,
    /// Back to translation below this angle, rad.
    pub angle_release: f64,
    /// 1/s
    pub k_rotation: f64,
    /// 1/s
    pub k_lateral: f64,
    /// 1/s
    pub k_axial: f64,
    /// Aim point past the TEP along the lumen, m.
    pub goal_depth: f64,
    /// Lateral error below which the tip may close on the TEP, m.
    pub lateral_gate: f64,
    /// Hold-off distance before the TEP while centring, m.
    pub standoff: f64,
    /// Give up after this long without `stall_progress` improvement, s.
    pub stall_window: f64,
    /// m
    pub stall_progress: f64,
}

impl Default for DockingParams {
    fn default() -> Self {
        DockingParams {
            angle_gate: 2f64.to_radians(),
            angle_release: 0.5f64.to_radians(),
            k_rotation: 1.0,
            k_lateral: 0.8,
            k_axial: 0.4,
            goal_depth: 1.5e-3,
            lateral_gate: 0.1e-3,
            standoff: 2.0e-3,
            stall_window: 15.0,
            stall_progress: 0.2e-3,
        }
    }
}

/// Tracks the best error seen and reports a stall.
#[derive(Debug, Clone, Copy)]
struct StallWatch {
    best: f64,
    since: f64,
}

impl StallWatch {
    fn new() -> Self {
        StallWatch {
            best: f64::INFINITY,
            since: 0.0,
        }
    }

    fn stalled(&mut self, error: f64, time: f64, progress: f64, window: f64) -> bool {
        if error < self.best - progress {
            self.best = error;
            self.since = time;
        }
        time - self.since > window
    }
}

/// Proportional teleoperation policy: centre on the lumen axis, close on the
/// TEP, rotate about the tip when misaligned, then extrude.
#[derive(Debug, Clone)]
pub struct DockingPolicy {
    pub params: DockingParams,
    toggled_last: bool,
    stall: StallWatch,
}

impl DockingPolicy {
    pub fn new(params: DockingParams) -> Self {
        DockingPolicy {
            params,
            toggled_last: false,
            stall: StallWatch::new(),
        }
    }
}

impl Operator for DockingPolicy {
    fn act(&mut self, obs: &Observation<'_>) -> Action {
        let p = &self.params;
        let s = obs.state;
        let trocar = &obs.scene.trocar;
        let report = s.docking;
        if report.status == DockingStatus::Docked {
            self.toggled_last = false;
            return Action::pedal(pedal_with_axes(false, true, Vector3::zeros()));
        }
        let progress = report.lateral_offset + (report.axial_distance - p.goal_depth).abs() + report.axis_angle * 1e-2;
        if self.stall.stalled(progress, s.time, p.stall_progress, p.stall_window) {
            return Action::abort();
        }
        let rotating = s.mode == ControlMode::TeleopRotational;
        let want_rotation = if rotating {
            report.axis_angle > p.angle_release
        } else {
            report.axis_angle > p.angle_gate
        };
        let in_teleop = matches!(s.mode, ControlMode::TeleopTranslational | ControlMode::TeleopRotational);
        if in_teleop && want_rotation != rotating {
            // One tick pressed, one released, per switch.
            self.toggled_last = !self.toggled_last;
            return Action::pedal(pedal_with_axes(self.toggled_last, false, Vector3::zeros()));
        }
        self.toggled_last = false;
        let tip = &s.tool.tip_pose;
        let axis = trocar.lumen_axis();
        let axes = if rotating && want_rotation {
            let cross = tip.z_axis().cross(&axis);
            let w = if cross.norm() > 0.0 {
                cross.normalize() * report.axis_angle * p.k_rotation
            } else {
                Vector3::zeros()
            };
            rotational_axes(&w, obs)
        } else {
            let d = tip.translation - trocar.tep_pose.translation;
            let lateral = d - axis * d.dot(&axis);
            let target = if report.lateral_offset <= p.lateral_gate || report.axial_distance < -p.standoff - 1e-3 {
                p.goal_depth
            } else {
                -p.standoff
            };
            let v = -lateral * p.k_lateral + axis * ((target - report.axial_distance) * p.k_axial);
            translational_axes(&v, obs)
        };
        Action::pedal(pedal_with_axes(false, false, axes))
    }
}

/// Drives the tip straight at a fixed point, heedless of the eye.
#[derive(Debug, Clone)]
pub struct TargetPolicy {
    pub target: Vector3<f64>,
    /// 1/s
    pub gain: f64,
}

impl Operator for TargetPolicy {
    fn act(&mut self, obs: &Observation<'_>) -> Action {
        let v = (self.target - obs.state.tool.tip_pose.translation) * self.gain;
        Action::pedal(pedal_with_axes(false, false, translational_axes(&v, obs)))
    }
}

/// Holds the deadman and never moves.
#[derive(Debug, Clone, Default)]
pub struct IdlePolicy;

impl Operator for IdlePolicy {
    fn act(&mut self, _obs: &Observation<'_>) -> Action {
        Action::pedal(PedalState::held())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandGuideParams {
    /// Time to carry the tip from the start to the pre-dock waypoint, s.
    pub approach_time: f64,
    /// Time from the waypoint to the docked target, s.
    pub insert_time: f64,
    /// Waypoint distance before the TEP on the lumen axis, m.
    pub standoff: f64,
    /// Target depth past the TEP, m.
    pub goal_depth: f64,
    pub stiffness: [f64; 6],
    pub damping: [f64; 6],
    /// N
    pub max_force: f64,
    /// Abort this long after the schedule ends without docking, s.
    pub stall_window: f64,
}

impl Default for HandGuideParams {
    fn default() -> Self {
        HandGuideParams {
            approach_time: 3.0,
            insert_time: 2.5,
            standoff: 8.0e-3,
            goal_depth: 1.5e-3,
            stiffness: [400.0, 400.0, 400.0, 8.0, 8.0, 8.0],
            damping: [4.0, 4.0, 4.0, 0.05, 0.05, 0.05],
            max_force: 20.0,
            stall_window: 15.0,
        }
    }
}

/// Simulated hand for co-manipulation: its target sweeps from the start pose
/// to a waypoint on the lumen axis, then into the trocar.
#[derive(Debug, Clone)]
pub struct HandGuide {
    pub params: HandGuideParams,
    start: Option<Pose>,
}

impl HandGuide {
    pub fn new(params: HandGuideParams) -> Self {
        HandGuide { params, start: None }
    }

    /// Hand target at time `t` for a sweep that began at `start`.
    pub fn target_at(&self, start: &Pose, scene: &Scene, t: f64) -> Pose {
        let p = &self.params;
        let waypoint = scene.pose_on_axis(-p.standoff);
        let goal = scene.pose_on_axis(p.goal_depth);
        if t < p.approach_time {
            interpolate(start, &waypoint, smoothstep(t / p.approach_time))
        } else if t < p.approach_time + p.insert_time {
            interpolate(&waypoint, &goal, smoothstep((t - p.approach_time) / p.insert_time))
        } else {
            goal
        }
    }
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn interpolate(a: &Pose, b: &Pose, s: f64) -> Pose {
    let rel = rotation_log(&(a.rotation.transpose() * b.rotation));
    let angle = rel.norm();
    let rotation = if angle > 0.0 {
        a.rotation * axis_angle_matrix(&(rel / angle), angle * s)
    } else {
        a.rotation
    };
    Pose::new(rotation, a.translation + (b.translation - a.translation) * s)
}

impl Operator for HandGuide {
    fn act(&mut self, obs: &Observation<'_>) -> Action {
        let s = obs.state;
        let start = *self.start.get_or_insert(s.tool.tip_pose);
        let p = self.params;
        if s.time > p.approach_time + p.insert_time + p.stall_window && s.docking.status != DockingStatus::Docked {
            return Action::abort();
        }
        let target = self.target_at(&start, obs.scene, s.time);
        let hand = HumanHandModel::at_tip(obs.model, target, p.stiffness, p.damping, p.max_force);
        let docked = s.docking.status == DockingStatus::Docked;
        Action {
            pedal: pedal_with_axes(false, docked, Vector3::zeros()),
            hand: Some(hand),
            ..Action::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorneaStrikeParams {
    /// Aim this far inside the cornea apex, m.
    pub depth: f64,
    /// 1/s
    pub gain: f64,
}

impl Default for CorneaStrikeParams {
    fn default() -> Self {
        CorneaStrikeParams { depth: 2e-3, gain: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScleraPressParams {
    /// Aim point on the globe, angles as for the TEP placement.
    pub polar_angle: f64,
    pub azimuth: f64,
    /// m
    pub depth: f64,
    /// 1/s
    pub gain: f64,
}

impl Default for ScleraPressParams {
    fn default() -> Self {
        ScleraPressParams {
            polar_angle: 75f64.to_radians(),
            azimuth: 150f64.to_radians(),
            depth: 4e-3,
            gain: 2.0,
        }
    }
}

/// Operator selection as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyParams {
    Docking(DockingParams),
    HandGuide(HandGuideParams),
    CorneaStrike(CorneaStrikeParams),
    ScleraPress(ScleraPressParams),
    Idle,
}

impl PolicyParams {
    /// The virtual participant for a task: the hand for task 1, the pedal policy otherwise.
    pub fn default_for(task: TaskId) -> Self {
        if task.is_teleoperated() {
            PolicyParams::Docking(DockingParams::default())
        } else {
            PolicyParams::HandGuide(HandGuideParams::default())
        }
    }
}

/// Instantiate the operator for `task`. Pedal policies need a teleoperated
/// task and the hand needs task 1.
pub fn build_operator(task: TaskId, params: &PolicyParams, scene: &Scene) -> Result<Box<dyn Operator>> {
    let teleop = task.is_teleoperated();
    let mismatch = |what: &str| Error::invalid("policy", format!("{what} policy does not fit task {task}"));
    Ok(match params {
        PolicyParams::Docking(p) if teleop => Box::new(DockingPolicy::new(*p)),
        PolicyParams::Docking(_) => return Err(mismatch("docking")),
        PolicyParams::HandGuide(p) if !teleop => Box::new(HandGuide::new(*p)),
        PolicyParams::HandGuide(_) => return Err(mismatch("hand guide")),
        PolicyParams::CorneaStrike(p) if teleop => Box::new(TargetPolicy {
            target: scene.phantom.cornea_apex() - scene.phantom.cornea_axis * p.depth,
            gain: p.gain,
        }),
        PolicyParams::ScleraPress(p) if teleop => {
            let ph = &scene.phantom;
            let n = ph.surface_normal(p.polar_angle, p.azimuth);
            Box::new(TargetPolicy {
                target: ph.globe_center + n * (ph.globe_radius - p.depth),
                gain: p.gain,
            })
        }
        PolicyParams::CorneaStrike(_) | PolicyParams::ScleraPress(_) => return Err(mismatch("target")),
        PolicyParams::Idle => Box::new(IdlePolicy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm_model::forward_kinematics;

    fn observe<'a>(state: &'a SimState, scene: &'a Scene, model: &'a ArmModel, gains: &'a Gains) -> Observation<'a> {
        Observation {
            state,
            scene,
            model,
            gains,
            task: TaskId::HYBRID,
        }
    }

    fn state_at(model: &ArmModel, scene: &Scene, tip: Pose) -> SimState {
        let mut s = SimState::at_rest(model, scene, model.home.clone(), 0).unwrap();
        s.tool = scene.tool_at(tip);
        s.docking = crate::scene::docking_status(&s.tool, &scene.trocar);
        s.mode = ControlMode::TeleopTranslational;
        s
    }

    #[test]
    fn docked_state_requests_completion_without_motion() {
        let model = ArmModel::default_profile();
        let scene = Scene::default();
        let gains = Gains::default();
        let s = state_at(&model, &scene, scene.pose_on_axis(1e-3));
        let a = DockingPolicy::new(DockingParams::default()).act(&observe(&s, &scene, &model, &gains));
        assert!(a.pedal.deadman() && a.pedal.complete() && !a.abort);
        assert_eq!(a.pedal.axes(), Vector3::zeros());
    }

    #[test]
    fn lateral_error_commands_colinear_axes() {
        let model = ArmModel::default_profile();
        let scene = Scene::default();
        let gains = Gains::default();
        let params = DockingParams {
            k_axial: 0.0,
            ..DockingParams::default()
        };
        let mut tip = scene.pose_on_axis(-5e-3);
        let offset = scene.trocar.tep_pose.rotation.column(0) * 1e-3 + scene.trocar.tep_pose.rotation.column(1) * 2e-3;
        tip.translation += offset;
        let s = state_at(&model, &scene, tip);
        let a = DockingPolicy::new(params).act(&observe(&s, &scene, &model, &gains));
        let commanded = tip.rotation * a.pedal.axes();
        assert!(commanded.cross(&-offset).norm() < 1e-12 * commanded.norm().max(1.0));
        assert!(commanded.dot(&-offset) > 0.0);
    }

    #[test]
    fn misalignment_toggles_into_rotation() {
        let model = ArmModel::default_profile();
        let scene = Scene::default();
        let gains = Gains::default();
        let base = scene.pose_on_axis(-0.01);
        let tilt = axis_angle_matrix(&scene.trocar.tep_pose.rotation.column(0).into_owned(), 0.2);
        let s = state_at(&model, &scene, Pose::new(tilt * base.rotation, base.translation));
        let mut policy = DockingPolicy::new(DockingParams::default());
        let a = policy.act(&observe(&s, &scene, &model, &gains));
        assert!(a.pedal.mode_toggle());
        let b = policy.act(&observe(&s, &scene, &model, &gains));
        assert!(!b.pedal.mode_toggle());
    }

    #[test]
    fn hand_schedule_ends_on_the_docked_target() {
        let model = ArmModel::default_profile();
        let scene = Scene::default();
        let start = forward_kinematics(&model, &model.home).unwrap();
        let g = HandGuide::new(HandGuideParams::default());
        let at0 = g.target_at(&start, &scene, 0.0);
        assert!((at0.translation - start.translation).norm() < 1e-15);
        let end = g.target_at(&start, &scene, 100.0);
        assert_eq!(end, scene.pose_on_axis(HandGuideParams::default().goal_depth));
    }

    #[test]
    fn policy_task_mismatch_is_rejected() {
        let scene = Scene::default();
        assert!(build_operator(TaskId::CO_MANIPULATION, &PolicyParams::default_for(TaskId::HYBRID), &scene).is_err());
        assert!(build_operator(TaskId::HYBRID, &PolicyParams::default_for(TaskId::CO_MANIPULATION), &scene).is_err());
        assert!(build_operator(TaskId::HYBRID_CAMERA, &PolicyParams::Idle, &scene).is_ok());
    }
}
