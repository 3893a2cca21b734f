//! Trial lifecycle: start configuration, the tick loop, termination and the
//! resulting record.

use super::operator::{Action, Observation, Operator};
use super::session::{Recorder, SessionHeader};
use super::{sim_step, LoggedEvent, SimConfig, SimEvent, SimState, StepContext};
use crate::arm_model::{axis_angle_matrix, solve_ik, ArmModel, IkOptions, Pose};
use crate::control::{ControllerState, Gains};
use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::trial::{adjudicate, collision_count, is_terminal, Outcome, StartPose, TaskSpec, TrialRecord};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Offsets of the co-manipulation start from the TEP, in the TEP frame.
const TRIAL_START_BACK: f64 = 0.08;
const TRIAL_START_SIDE: f64 = 0.03;
const TRIAL_START_TILT: f64 = 0.26;

/// Participant id written into records produced by scripted operators.
pub const VIRTUAL_PARTICIPANT: &str = "virtual";

/// Tip pose a trial starts from, jittered by `rng`.
pub fn start_tip_pose(scene: &Scene, task: &TaskSpec, rng: &mut ChaCha8Rng) -> Pose {
    let tep = &scene.trocar.tep_pose;
    let x = tep.rotation.column(0).into_owned();
    let y = tep.rotation.column(1).into_owned();
    let nominal = match task.start {
        StartPose::HandoverPose { distance } => scene.pose_on_axis(-distance),
        StartPose::TrialStartPose => {
            let p = scene.pose_on_axis(-TRIAL_START_BACK);
            Pose::new(axis_angle_matrix(&y, TRIAL_START_TILT) * p.rotation, p.translation + x * TRIAL_START_SIDE)
        }
    };
    let j = task.start_jitter;
    // Uniform over the disc of radius j.position in the TEP xy plane.
    let r = j.position * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let shift = (x * phi.cos() + y * phi.sin()) * r;
    let tilt_dir = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt_axis: Vector3<f64> = x * tilt_dir.cos() + y * tilt_dir.sin();
    let tilt = axis_angle_matrix(&tilt_axis, j.angle * rng.random::<f64>());
    Pose::new(tilt * nominal.rotation, nominal.translation + shift)
}

/// Solve the start configuration. With a `limit_window`, the returned model
/// has its position limits narrowed around it and its home moved to it.
pub fn initial_state(model: &ArmModel, scene: &Scene, task: &TaskSpec, seed: u64) -> Result<(ArmModel, SimState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let tip = start_tip_pose(scene, task, &mut rng);
    let q = solve_ik(model, &tip, &model.home, &IkOptions::default())?;
    let mut model = model.clone();
    if let Some(w) = task.limit_window {
        for i in 0..model.dof() {
            model.limits.lower[i] = model.limits.lower[i].max(q[i] - w);
            model.limits.upper[i] = model.limits.upper[i].min(q[i] + w);
        }
        model.home = q.clone();
    }
    let state = SimState::at_rest(&model, scene, q, seed)?;
    Ok((model, state))
}

/// One trial in progress. Owns its configuration so it can be moved onto a
/// simulation thread.
#[derive(Debug, Clone)]
pub struct TrialDriver {
    pub model: ArmModel,
    pub scene: Scene,
    pub task: TaskSpec,
    pub cfg: SimConfig,
    state: SimState,
    controller: ControllerState,
    events: Vec<LoggedEvent>,
    recorder: Recorder,
    camera_time: f64,
    finished: bool,
}

impl TrialDriver {
    pub fn new(model: &ArmModel, scene: &Scene, gains: &Gains, task: &TaskSpec, cfg: &SimConfig) -> Result<Self> {
        task.validate()?;
        cfg.validate()?;
        gains.validate()?;
        scene.validate()?;
        let (model, state) = initial_state(model, scene, task, cfg.seed)?;
        let header = SessionHeader::new(&model, scene, gains, task, cfg, &state.q);
        Self::from_header_state(header, state)
    }

    /// Driver that starts from a recorded session header.
    pub fn from_header(header: &SessionHeader) -> Result<Self> {
        let state = SimState::at_rest(&header.model, &header.scene, header.start_q.clone(), header.sim.seed)?;
        Self::from_header_state(header.clone(), state)
    }

    fn from_header_state(header: SessionHeader, state: SimState) -> Result<Self> {
        if header.start_q.len() != header.model.dof() {
            return Err(Error::DimensionMismatch {
                what: "start configuration",
                expected: header.model.dof(),
                found: header.start_q.len(),
            });
        }
        Ok(TrialDriver {
            model: header.model.clone(),
            scene: header.scene.clone(),
            task: header.task.clone(),
            cfg: header.sim.clone(),
            controller: ControllerState::new(header.gains.clone()),
            recorder: Recorder::new(header),
            state,
            events: Vec::new(),
            camera_time: 0.0,
            finished: false,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn gains(&self) -> &Gains {
        &self.controller.gains
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    pub fn recorder(&self) -> &Recorder {
        &self.recorder
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn observation(&self) -> Observation<'_> {
        Observation {
            state: &self.state,
            scene: &self.scene,
            model: &self.model,
            gains: &self.controller.gains,
            task: self.task.task_id,
        }
    }

    fn tick_limit(&self) -> u64 {
        let limit = self.task.time_limit.min(self.cfg.max_duration);
        (limit / self.cfg.dt - 1e-9).ceil() as u64
    }

    /// Apply one tick of operator input. Returns the events it raised.
    pub fn step(&mut self, action: &Action) -> Result<&[LoggedEvent]> {
        if self.finished {
            return Err(Error::invalid("trial", "already finished"));
        }
        self.recorder.push(self.state.tick, action);
        let first = self.events.len();
        if action.abort {
            self.events.push(LoggedEvent {
                tick: self.state.tick,
                time: self.state.time,
                event: SimEvent::OperatorAbort,
            });
            self.finished = true;
            return Ok(&self.events[first..]);
        }
        if let Some(hand) = &action.hand {
            hand.validate(&self.model)?;
        }
        let ctx = StepContext {
            model: &self.model,
            scene: &self.scene,
            task: self.task.task_id,
            cfg: &self.cfg,
        };
        let (state, controller) = sim_step(&self.state, &self.controller, &action.pedal, action.hand.as_ref(), &ctx)?;
        self.state = state;
        self.controller = controller;
        if action.camera_inset && self.task.camera_enabled {
            self.camera_time += self.cfg.dt;
        }
        self.events.extend(self.state.pending_events.iter().cloned());
        if self.state.pending_events.iter().any(|e| is_terminal(&e.event)) {
            self.finished = true;
        } else if self.state.tick >= self.tick_limit() {
            self.events.push(LoggedEvent {
                tick: self.state.tick,
                time: self.state.time,
                event: SimEvent::Timeout,
            });
            self.finished = true;
        }
        Ok(&self.events[first..])
    }

    /// Adjudicated record so far. Fails if the trial has not finished.
    pub fn record(&self, participant_id: &str, attempt_index: u32) -> Result<TrialRecord> {
        let (outcome, duration) = adjudicate(&self.events, self.state.time, &self.task)?;
        let camera_view_fraction = if self.task.camera_enabled && duration > 0.0 {
            (self.camera_time / duration).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (success, failure_reason) = match outcome {
            Outcome::Success => (true, None),
            Outcome::Failure(r) => (false, Some(r)),
        };
        Ok(TrialRecord {
            task_id: self.task.task_id,
            participant_id: participant_id.to_string(),
            attempt_index,
            seed: Some(self.cfg.seed),
            duration,
            success,
            failure_reason,
            collision_count: collision_count(&self.events),
            camera_view_fraction,
            event_log_ref: None,
            notes: String::new(),
        })
    }
}

/// Everything a finished trial produced.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub record: TrialRecord,
    pub events: Vec<LoggedEvent>,
    pub final_state: SimState,
    pub recorder: Recorder,
}

/// Run a trial to completion with a scripted operator.
pub fn run_trial(
    model: &ArmModel,
    scene: &Scene,
    gains: &Gains,
    task: &TaskSpec,
    operator: &mut dyn Operator,
    cfg: &SimConfig,
) -> Result<TrialRun> {
    let mut driver = TrialDriver::new(model, scene, gains, task, cfg)?;
    while !driver.is_finished() {
        let action = operator.act(&driver.observation());
        driver.step(&action)?;
    }
    let record = driver.record(VIRTUAL_PARTICIPANT, 1)?;
    Ok(TrialRun {
        record,
        final_state: driver.state.clone(),
        events: driver.events,
        recorder: driver.recorder,
    })
}
