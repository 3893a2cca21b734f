//! Operator-facing control laws: pedal interpretation, the deadman-gated mode
//! machine, admittance from estimated wrench and the resolved-rate tick.

use crate::arm_model::{
    clamp_to_limits, damped_pseudoinverse, estimate_external_wrench, geometric_jacobian,
    inverse_dynamics, ArmModel, Frame, Jacobian, JointVector, LimitEvent, Pose, RefPoint,
    TorqueFilter, TorqueVector, Twist, Wrench, DEFAULT_DLS_LAMBDA,
};
use crate::error::{Error, Result};
use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default command period: 100 Hz.
pub const DEFAULT_DT: f64 = 0.01;

/// Trial task 1, 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TaskId(u8);

impl TaskId {
    pub const CO_MANIPULATION: TaskId = TaskId(1);
    pub const HYBRID: TaskId = TaskId(2);
    pub const HYBRID_CAMERA: TaskId = TaskId(3);

    pub fn new(id: u8) -> Result<Self> {
        match id {
            1..=3 => Ok(TaskId(id)),
            other => Err(Error::UnknownTask(other)),
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_teleoperated(self) -> bool {
        self.0 != 1
    }
}

impl TryFrom<u8> for TaskId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        TaskId::new(v)
    }
}

impl From<TaskId> for u8 {
    fn from(t: TaskId) -> u8 {
        t.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Snapshot of the foot pedal: four buttons, a two-axis joystick and a rocker.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "PedalRepr")]
pub struct PedalState {
    /// `[deadman, mode_toggle, clutch, complete]`
    pub buttons: [bool; 4],
    pub joystick: [f64; 2],
    pub rocker: f64,
}

#[derive(Deserialize)]
struct PedalRepr {
    buttons: [bool; 4],
    joystick: [f64; 2],
    rocker: f64,
}

impl From<PedalRepr> for PedalState {
    fn from(r: PedalRepr) -> Self {
        PedalState::new(r.buttons, r.joystick, r.rocker)
    }
}

fn clamp_axis(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-1.0, 1.0)
    }
}

impl PedalState {
    pub const DEADMAN: usize = 0;
    pub const MODE_TOGGLE: usize = 1;
    pub const CLUTCH: usize = 2;
    pub const COMPLETE: usize = 3;

    /// Axis values are clamped to `[-1, 1]`; NaN reads as centred.
    pub fn new(buttons: [bool; 4], joystick: [f64; 2], rocker: f64) -> Self {
        PedalState {
            buttons,
            joystick: [clamp_axis(joystick[0]), clamp_axis(joystick[1])],
            rocker: clamp_axis(rocker),
        }
    }

    /// Deadman held, axes centred.
    pub fn held() -> Self {
        let mut p = PedalState::default();
        p.buttons[Self::DEADMAN] = true;
        p
    }

    pub fn deadman(&self) -> bool {
        self.buttons[Self::DEADMAN]
    }

    pub fn mode_toggle(&self) -> bool {
        self.buttons[Self::MODE_TOGGLE]
    }

    pub fn clutch(&self) -> bool {
        self.buttons[Self::CLUTCH]
    }

    pub fn complete(&self) -> bool {
        self.buttons[Self::COMPLETE]
    }

    pub fn axes(&self) -> Vector3<f64> {
        Vector3::new(self.joystick[0], self.joystick[1], self.rocker)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    CoManipulation,
    TeleopTranslational,
    TeleopRotational,
    Hold,
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ControlMode::CoManipulation => "co_manipulation",
            ControlMode::TeleopTranslational => "teleop_translational",
            ControlMode::TeleopRotational => "teleop_rotational",
            ControlMode::Hold => "hold",
        };
        f.write_str(s)
    }
}

/// Pedal axes `(joystick x, joystick y, rocker)` → tip-frame axes, per teleop mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMapping {
    pub translational: [[f64; 3]; 3],
    pub rotational: [[f64; 3]; 3],
}

impl Default for AxisMapping {
    fn default() -> Self {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        AxisMapping {
            translational: id,
            rotational: id,
        }
    }
}

fn to_matrix(m: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    )
}

/// Control gains. `k_task` shapes the resolved-rate law, `k_admittance` the
/// co-manipulation law; both are diagonal over `[linear; angular]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gains {
    pub k_task: [f64; 6],
    /// (m/s)/N for the first three entries, (rad/s)/(N·m) for the rest.
    pub k_admittance: [f64; 6],
    /// m/s at full deflection.
    pub pedal_linear_scale: f64,
    /// rad/s at full deflection.
    pub pedal_angular_scale: f64,
    pub dls_lambda: f64,
    /// Damping of `(Jᵀ)⁺` in the wrench estimate.
    pub wrench_lambda: f64,
    /// Optional low-pass on measured torques, seconds. Off when absent.
    pub torque_filter_time_constant: Option<f64>,
    pub axis_mapping: AxisMapping,
    /// 1/s. In rotational mode the tip is pulled back to where the mode was
    /// entered at this rate; 0 leaves the pivot open-loop.
    pub pivot_gain: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            k_task: [1.0; 6],
            k_admittance: [0.02, 0.02, 0.02, 0.2, 0.2, 0.2],
            pedal_linear_scale: 0.005,
            pedal_angular_scale: 0.1,
            dls_lambda: DEFAULT_DLS_LAMBDA,
            wrench_lambda: 0.0,
            torque_filter_time_constant: None,
            axis_mapping: AxisMapping::default(),
            pivot_gain: 20.0,
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.k_task.iter().copied().all(positive) {
            return Err(Error::invalid("gains", "k_task entries must be positive"));
        }
        if !self.k_admittance.iter().copied().all(positive) {
            return Err(Error::invalid("gains", "k_admittance entries must be positive"));
        }
        if !positive(self.pedal_linear_scale) || !positive(self.pedal_angular_scale) {
            return Err(Error::invalid("gains", "pedal scales must be positive"));
        }
        if !(self.dls_lambda >= 0.0) || !(self.wrench_lambda >= 0.0) || !(self.pivot_gain >= 0.0) {
            return Err(Error::invalid("gains", "damping must be non-negative"));
        }
        if let Some(tc) = self.torque_filter_time_constant {
            if !positive(tc) {
                return Err(Error::invalid("gains", "filter time constant must be positive"));
            }
        }
        Ok(())
    }

    /// Parse a gain/profile file; absent fields take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let g: Gains =
            serde_json::from_str(text).map_err(|e| Error::invalid("gains file", e.to_string()))?;
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: ControlMode,
    pub previous_buttons: [bool; 4],
    pub gains: Gains,
    pub torque_filter: Option<TorqueFilter>,
    /// Tip position held while in rotational mode.
    pub pivot: Option<Vector3<f64>>,
}

impl ControllerState {
    pub fn new(gains: Gains) -> Self {
        let torque_filter = gains.torque_filter_time_constant.map(TorqueFilter::new);
        ControllerState {
            mode: ControlMode::Hold,
            previous_buttons: [false; 4],
            gains,
            torque_filter,
            pivot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlEvent {
    ModeChanged { from: ControlMode, to: ControlMode },
    Limit(LimitEvent),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlCommand {
    /// rad/s
    pub dq: JointVector,
    pub events: Vec<ControlEvent>,
    /// Task twist the command realizes, when one was computed.
    pub task_twist: Option<Twist>,
}

/// Deadman-gated mode machine. Pure in `(state, pedal, task)`.
pub fn update_mode(state: &ControllerState, pedal: &PedalState, task: TaskId) -> ControllerState {
    let mut next = state.clone();
    let toggle_edge = pedal.mode_toggle() && !state.previous_buttons[PedalState::MODE_TOGGLE];
    next.mode = if !pedal.deadman() {
        ControlMode::Hold
    } else if !task.is_teleoperated() {
        ControlMode::CoManipulation
    } else {
        match state.mode {
            ControlMode::TeleopTranslational if toggle_edge => ControlMode::TeleopRotational,
            ControlMode::TeleopRotational if toggle_edge => ControlMode::TeleopTranslational,
            m @ (ControlMode::TeleopTranslational | ControlMode::TeleopRotational) => m,
            ControlMode::Hold | ControlMode::CoManipulation => ControlMode::TeleopTranslational,
        }
    };
    next.previous_buttons = pedal.buttons;
    next
}

/// Pedal axes → base-frame twist at the tip. Translational motion is along
/// tip-frame axes; rotation is about the tip with zero tip linear velocity.
pub fn pedal_to_twist(
    pedal: &PedalState,
    mode: ControlMode,
    gains: &Gains,
    tip_pose: &Pose,
) -> Result<Twist> {
    let axes = pedal.axes();
    match mode {
        ControlMode::TeleopTranslational => {
            let local = to_matrix(&gains.axis_mapping.translational) * axes * gains.pedal_linear_scale;
            Ok(Twist::base_at_tip(tip_pose.rotation * local, Vector3::zeros()))
        }
        ControlMode::TeleopRotational => {
            let local = to_matrix(&gains.axis_mapping.rotational) * axes * gains.pedal_angular_scale;
            Ok(Twist::base_at_tip(Vector3::zeros(), tip_pose.rotation * local))
        }
        other => Err(Error::ModeContract(other.to_string())),
    }
}

/// `dx = K f`, elementwise over `[force; torque]`.
pub fn admittance_twist(f: &Wrench, gains: &Gains) -> Twist {
    let k = &gains.k_admittance;
    Twist {
        linear: Vector3::new(k[0] * f.force.x, k[1] * f.force.y, k[2] * f.force.z),
        angular: Vector3::new(k[3] * f.torque.x, k[4] * f.torque.y, k[5] * f.torque.z),
        frame: Frame::Base,
        reference_point: f.reference_point,
    }
}

/// `dq = J⁺_λ (k_task ⊙ dx)`.
pub fn resolved_rate_step(j: &Jacobian, dx: &Twist, gains: &Gains) -> Result<JointVector> {
    if dx.frame != Frame::Base {
        return Err(Error::ReferenceMismatch(
            "twist must be expressed in the base frame".into(),
        ));
    }
    if dx.reference_point != j.reference_point {
        return Err(Error::ReferenceMismatch(format!(
            "twist at {:?}, jacobian at {:?}",
            dx.reference_point, j.reference_point
        )));
    }
    let v = dx.to_vector6();
    let scaled = DVector::from_iterator(6, v.iter().zip(&gains.k_task).map(|(a, k)| a * k));
    let dq = damped_pseudoinverse(j, gains.dls_lambda) * scaled;
    Ok(JointVector::from(dq))
}

/// One 100 Hz control period: mode update, task twist for the active mode,
/// resolved-rate projection and limit guarding.
#[allow(clippy::too_many_arguments)]
pub fn control_tick(
    state: &ControllerState,
    model: &ArmModel,
    q: &JointVector,
    qd: &JointVector,
    pedal: &PedalState,
    tau_measured: &TorqueVector,
    task: TaskId,
    dt: f64,
) -> Result<(ControllerState, ControlCommand)> {
    debug_assert!(dt > 0.0);
    let n = model.dof();
    model.check_q(q)?;
    qd.check_len(n, "joint velocity")?;
    tau_measured.check_len(n, "measured torque")?;

    let mut next = update_mode(state, pedal, task);
    let mut events = Vec::new();
    if next.mode != state.mode {
        events.push(ControlEvent::ModeChanged {
            from: state.mode,
            to: next.mode,
        });
    }

    // The filter tracks the torque signal whether or not the admittance law is active.
    let tau = match next.torque_filter.as_mut() {
        Some(filter) => filter.apply(tau_measured, dt),
        None => tau_measured.clone(),
    };

    if next.mode != ControlMode::TeleopRotational {
        next.pivot = None;
    }
    let dx = match next.mode {
        ControlMode::Hold => None,
        ControlMode::CoManipulation => {
            let j = geometric_jacobian(model, q, RefPoint::Tip)?;
            let zero = JointVector::zeros(n);
            let tau_model = inverse_dynamics(model, q, qd, &zero, &model.gravity)?;
            let wrench = estimate_external_wrench(&j, &tau, &tau_model, next.gains.wrench_lambda)?;
            Some((j, admittance_twist(&wrench, &next.gains)))
        }
        mode @ (ControlMode::TeleopTranslational | ControlMode::TeleopRotational) => {
            let tip = crate::arm_model::forward_kinematics(model, q)?;
            let j = geometric_jacobian(model, q, RefPoint::Tip)?;
            let mut twist = pedal_to_twist(pedal, mode, &next.gains, &tip)?;
            if mode == ControlMode::TeleopRotational {
                let pivot = *next.pivot.get_or_insert(tip.translation);
                twist.linear = (pivot - tip.translation) * next.gains.pivot_gain;
            }
            Some((j, twist))
        }
    };

    let Some((j, twist)) = dx else {
        return Ok((
            next,
            ControlCommand {
                dq: JointVector::zeros(n),
                events,
                task_twist: None,
            },
        ));
    };

    let raw = resolved_rate_step(&j, &twist, &next.gains)?;
    let (dq, limit) = clamp_to_limits(q, &raw, &model.limits, dt);
    if let Some(limit) = limit {
        events.push(ControlEvent::Limit(limit));
    }
    Ok((
        next,
        ControlCommand {
            dq,
            events,
            task_twist: Some(twist),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm_model::{forward_kinematics, Jacobian};
    use nalgebra::DMatrix;
    use std::f64::consts::FRAC_PI_2;

    fn pedal(deadman: bool, toggle: bool, joystick: [f64; 2], rocker: f64) -> PedalState {
        PedalState::new([deadman, toggle, false, false], joystick, rocker)
    }

    #[test]
    fn pedal_axes_are_clamped() {
        let p = PedalState::new([false; 4], [3.0, -7.0], f64::NAN);
        assert_eq!(p.joystick, [1.0, -1.0]);
        assert_eq!(p.rocker, 0.0);
        let p: PedalState =
            serde_json::from_str(r#"{"buttons":[true,false,false,false],"joystick":[2.0,0.5],"rocker":-4}"#)
                .unwrap();
        assert_eq!(p.joystick, [1.0, 0.5]);
        assert_eq!(p.rocker, -1.0);
    }

    #[test]
    fn task_ids_outside_range_are_rejected() {
        assert!(TaskId::new(0).is_err());
        assert!(TaskId::new(4).is_err());
        assert!(serde_json::from_str::<TaskId>("5").is_err());
        assert_eq!(serde_json::from_str::<TaskId>("2").unwrap(), TaskId::HYBRID);
    }

    #[test]
    fn deadman_press_in_task_two_enters_translational() {
        let s = ControllerState::new(Gains::default());
        let s = update_mode(&s, &pedal(true, false, [0.0; 2], 0.0), TaskId::HYBRID);
        assert_eq!(s.mode, ControlMode::TeleopTranslational);
    }

    #[test]
    fn toggle_rising_edge_switches_teleop_mode() {
        let t = TaskId::HYBRID;
        let s = ControllerState::new(Gains::default());
        let s = update_mode(&s, &pedal(true, false, [0.0; 2], 0.0), t);
        let s = update_mode(&s, &pedal(true, true, [0.0; 2], 0.0), t);
        assert_eq!(s.mode, ControlMode::TeleopRotational);
        // Held toggle is not a new edge.
        let s = update_mode(&s, &pedal(true, true, [0.0; 2], 0.0), t);
        assert_eq!(s.mode, ControlMode::TeleopRotational);
        let s = update_mode(&s, &pedal(true, false, [0.0; 2], 0.0), t);
        let s = update_mode(&s, &pedal(true, true, [0.0; 2], 0.0), t);
        assert_eq!(s.mode, ControlMode::TeleopTranslational);
    }

    #[test]
    fn deadman_release_holds_from_any_mode() {
        for task in [TaskId::CO_MANIPULATION, TaskId::HYBRID, TaskId::HYBRID_CAMERA] {
            let s = ControllerState::new(Gains::default());
            let s = update_mode(&s, &pedal(true, false, [0.0; 2], 0.0), task);
            assert_ne!(s.mode, ControlMode::Hold);
            let s = update_mode(&s, &pedal(false, false, [0.0; 2], 0.0), task);
            assert_eq!(s.mode, ControlMode::Hold);
        }
        let s = ControllerState::new(Gains::default());
        let s = update_mode(&s, &pedal(true, false, [0.0; 2], 0.0), TaskId::CO_MANIPULATION);
        assert_eq!(s.mode, ControlMode::CoManipulation);
    }

    #[test]
    fn translational_identity_frame_scales_joystick() {
        let g = Gains::default();
        let tw = pedal_to_twist(
            &pedal(true, false, [1.0, 0.0], 0.0),
            ControlMode::TeleopTranslational,
            &g,
            &Pose::identity(),
        )
        .unwrap();
        assert_eq!(tw.linear, Vector3::new(0.005, 0.0, 0.0));
        assert_eq!(tw.angular, Vector3::zeros());
        assert_eq!(tw.reference_point, RefPoint::Tip);
    }

    #[test]
    fn translational_follows_tip_orientation() {
        let tip = Pose::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let tw = pedal_to_twist(
            &pedal(true, false, [1.0, 0.0], 0.0),
            ControlMode::TeleopTranslational,
            &Gains::default(),
            &tip,
        )
        .unwrap();
        assert!((tw.linear - Vector3::new(0.0, 0.005, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rotational_rocker_spins_about_tip_z() {
        let tw = pedal_to_twist(
            &pedal(true, false, [0.0, 0.0], 1.0),
            ControlMode::TeleopRotational,
            &Gains::default(),
            &Pose::identity(),
        )
        .unwrap();
        assert_eq!(tw.angular, Vector3::new(0.0, 0.0, 0.1));
        assert_eq!(tw.linear, Vector3::zeros());
    }

    #[test]
    fn pedal_twist_outside_teleop_is_contract_error() {
        for mode in [ControlMode::Hold, ControlMode::CoManipulation] {
            assert!(matches!(
                pedal_to_twist(&PedalState::held(), mode, &Gains::default(), &Pose::identity()),
                Err(Error::ModeContract(_))
            ));
        }
    }

    #[test]
    fn admittance_is_diagonal() {
        let g = Gains {
            k_admittance: [0.01, 0.01, 0.01, 0.2, 0.2, 0.2],
            ..Gains::default()
        };
        assert!(admittance_twist(&Wrench::zero(RefPoint::Tip), &g).is_zero());
        let w = Wrench {
            force: Vector3::new(10.0, 0.0, 0.0),
            torque: Vector3::zeros(),
            reference_point: RefPoint::Tip,
        };
        let tw = admittance_twist(&w, &g);
        assert!((tw.linear - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
        let w = Wrench {
            force: Vector3::zeros(),
            torque: Vector3::new(0.0, 1.0, 0.0),
            reference_point: RefPoint::Tip,
        };
        let tw = admittance_twist(&w, &g);
        assert_eq!(tw.linear, Vector3::zeros());
        assert!(tw.angular.norm() > 0.0);
    }

    #[test]
    fn resolved_rate_identity_and_zero() {
        let g = Gains {
            dls_lambda: 0.0,
            ..Gains::default()
        };
        let j = Jacobian::new(DMatrix::identity(6, 7), RefPoint::Tip).unwrap();
        let dx = Twist::base_at_tip(Vector3::new(0.01, 0.0, 0.0), Vector3::zeros());
        let dq = resolved_rate_step(&j, &dx, &g).unwrap();
        assert!((dq[0] - 0.01).abs() < 1e-15);
        assert!(dq.iter().skip(1).all(|v| v.abs() < 1e-15));
        let zero = resolved_rate_step(&j, &Twist::zero(Frame::Base, RefPoint::Tip), &g).unwrap();
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn resolved_rate_rejects_mismatched_reference() {
        let j = Jacobian::new(DMatrix::identity(6, 7), RefPoint::Flange).unwrap();
        let dx = Twist::base_at_tip(Vector3::x(), Vector3::zeros());
        assert!(matches!(
            resolved_rate_step(&j, &dx, &Gains::default()),
            Err(Error::ReferenceMismatch(_))
        ));
    }

    #[test]
    fn near_singular_rates_stay_within_dls_bound() {
        // Singular values 1, 0.5, 0.1, 0.01, 1e-3, 1e-4.
        let sv = [1.0, 0.5, 0.1, 0.01, 1e-3, 1e-4];
        let mut m = DMatrix::zeros(6, 7);
        for (i, s) in sv.iter().enumerate() {
            m[(i, i)] = *s;
        }
        let j = Jacobian::new(m, RefPoint::Tip).unwrap();
        let g = Gains::default();
        let dx = Twist::base_at_tip(Vector3::new(0.3, -0.2, 0.1), Vector3::new(0.4, 0.5, -0.6));
        let dq = resolved_rate_step(&j, &dx, &g).unwrap();
        let lambda = g.dls_lambda;
        // Bound computed by hand from the diagonal: max σ/(σ²+λ²) over sv.
        let bound = sv.iter().map(|s| s / (s * s + lambda * lambda)).fold(0.0, f64::max);
        assert!(dq.norm() <= bound * dx.to_vector6().norm() * (1.0 + 1e-12));
    }

    #[test]
    fn released_deadman_commands_exactly_zero() {
        let model = ArmModel::default_profile();
        let q = model.home.clone();
        let n = model.dof();
        let s = ControllerState::new(Gains::default());
        let p = pedal(false, true, [1.0, -1.0], 1.0);
        let tau = TorqueVector::from_vec(vec![5.0; n]);
        let (s2, cmd) = control_tick(&s, &model, &q, &JointVector::zeros(n), &p, &tau, TaskId::HYBRID, DEFAULT_DT).unwrap();
        assert_eq!(s2.mode, ControlMode::Hold);
        assert!(cmd.dq.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn co_manipulation_moves_tip_along_push() {
        let model = ArmModel::default_profile();
        let q = model.home.clone();
        let n = model.dof();
        let zero = JointVector::zeros(n);
        let j = geometric_jacobian(&model, &q, RefPoint::Tip).unwrap();
        let tau_model = inverse_dynamics(&model, &q, &zero, &zero, &model.gravity).unwrap();
        // τ = τ_model + Jᵀ f* with f* pushing +x.
        let f = DVector::from_vec(vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let tau = TorqueVector::from(tau_model.as_dvector() + j.matrix.transpose() * f);
        let s = ControllerState::new(Gains::default());
        let (_, cmd) = control_tick(&s, &model, &q, &zero, &PedalState::held(), &tau, TaskId::CO_MANIPULATION, DEFAULT_DT).unwrap();
        let v = j.apply(&cmd.dq).unwrap();
        assert!(v.linear.x > 0.0);
        // k_admittance 0.02 (m/s)/N × 5 N, up to the damping distortion.
        assert!((v.linear - Vector3::new(0.1, 0.0, 0.0)).norm() < 0.01, "{:?}", v.linear);
    }

    #[test]
    fn translational_tick_realizes_tip_forward_velocity() {
        let model = ArmModel::default_profile();
        let q = model.home.clone();
        let n = model.dof();
        let zero = JointVector::zeros(n);
        let s = ControllerState::new(Gains::default());
        let p = pedal(true, false, [0.0, 0.0], 1.0);
        let (_, cmd) = control_tick(&s, &model, &q, &zero, &p, &TorqueVector::zeros(n), TaskId::HYBRID, DEFAULT_DT).unwrap();
        let j = geometric_jacobian(&model, &q, RefPoint::Tip).unwrap();
        let v = j.apply(&cmd.dq).unwrap();
        let tip = forward_kinematics(&model, &q).unwrap();
        let commanded = tip.z_axis() * 0.005;
        assert!((v.linear - commanded).norm() < 0.05 * commanded.norm());
        assert!(v.angular.norm() < 1e-3);
    }
}
