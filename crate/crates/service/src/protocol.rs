//! Wire protocol: one JSON object per WebSocket text frame.
//!
//! Every message carries `protocol_version` and `session_id` next to a
//! `type` tag. The server assigns the session id; clients may send it back
//! empty until they have seen one.

use serde::{Deserialize, Serialize};
use trocar_core::arm_model::Pose;
use trocar_core::control::{ControlMode, PedalState, TaskId};
use trocar_core::scene::{project_tip_camera, DockingStatus, Scene, TepError};
use trocar_core::sim::{LoggedEvent, SimState};
use trocar_core::trial::{TlxRecord, TrialRecord};

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub protocol_version: String,
    pub session_id: String,
    #[serde(flatten)]
    pub body: Message,
}

impl Envelope {
    pub fn new(session_id: impl Into<String>, body: Message) -> Self {
        Envelope {
            protocol_version: PROTOCOL_VERSION.to_string(),
            session_id: session_id.into(),
            body,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("protocol messages serialize")
    }

    /// Parse and check the version.
    pub fn parse(text: &str) -> Result<Envelope, String> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if env.protocol_version != PROTOCOL_VERSION {
            return Err(format!("unsupported protocol_version {:?}", env.protocol_version));
        }
        Ok(env)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    StateSnapshot(StateSnapshot),
    PedalFrame(PedalFrame),
    TrialControl(TrialControl),
    Error(ErrorBody),
    TrialResult(TrialResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraOverlay {
    /// Projected trocar entry point, px; absent when behind the camera.
    pub tep: Option<[f64; 2]>,
    /// Projected rod tip, px.
    pub tip: Option<[f64; 2]>,
    pub image_size: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    /// 1-based attempt counter within the session.
    pub attempt: u32,
    pub tick: u64,
    pub time: f64,
    pub q: Vec<f64>,
    pub tip_pose: Pose,
    pub extrusion: f64,
    pub mode: ControlMode,
    pub tep_error: TepError,
    pub docking_status: DockingStatus,
    pub recent_events: Vec<LoggedEvent>,
    pub camera_overlay: Option<CameraOverlay>,
}

impl StateSnapshot {
    pub fn from_state(
        attempt: u32,
        state: &SimState,
        scene: &Scene,
        camera: bool,
        recent_events: Vec<LoggedEvent>,
    ) -> Self {
        let tip = &state.tool.tip_pose;
        let camera_overlay = camera.then(|| CameraOverlay {
            tep: project_tip_camera(&scene.camera, tip, &scene.trocar.tep_pose.translation),
            tip: project_tip_camera(&scene.camera, tip, &tip.translation),
            image_size: scene.camera.image_size,
        });
        StateSnapshot {
            attempt,
            tick: state.tick,
            time: state.time,
            q: state.q.iter().copied().collect(),
            tip_pose: *tip,
            extrusion: state.tool.extrusion,
            mode: state.mode,
            tep_error: TepError {
                lateral_offset: state.docking.lateral_offset,
                axial_distance: state.docking.axial_distance,
                axis_angle: state.docking.axis_angle,
            },
            docking_status: state.docking.status,
            recent_events,
            camera_overlay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedalFrame {
    /// Client clock, s. Informational only.
    pub client_timestamp: f64,
    /// `[deadman, mode_toggle, clutch, complete]`
    pub buttons: [bool; 4],
    pub joystick: [f64; 2],
    pub rocker: f64,
}

impl PedalFrame {
    pub fn pedal(&self) -> PedalState {
        PedalState::new(self.buttons, self.joystick, self.rocker)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum TrialControl {
    Start { task_id: TaskId, seed: u64 },
    Abort,
    Reset,
    SubmitTlx { record: TlxRecord },
    CameraInset { visible: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Another session is active.
    Busy,
    BadMessage,
    /// The request does not fit the trial lifecycle, e.g. abort while idle.
    InvalidState,
    UnsupportedTask,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

/// Sent once per finished attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub record: TrialRecord,
}
