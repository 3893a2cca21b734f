//! One interactive session's trial lifecycle, independent of the transport.
//!
//! The server feeds inbound messages in arrival order at each tick boundary
//! and calls [`SessionCore::tick`] once per simulation step. Pedal frames
//! only replace the held input, so when several arrive between two ticks the
//! last one wins.

use crate::protocol::{ErrorBody, ErrorCode, Message, PedalFrame, StateSnapshot, TrialControl, TrialResult};
use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::PathBuf;
use trocar_core::control::{PedalState, TaskId};
use trocar_core::scenario::Scenario;
use trocar_core::sim::{Action, SimConfig, TrialDriver};
use trocar_core::trial::{write_log, LogRecord, TaskSpec, TrialRecord};

const RECENT_EVENTS: usize = 16;
pub const RECORDS_FILE: &str = "records.jsonl";

/// Whether the snapshot for `tick` is due at `rate` Hz, decimating the
/// simulation rate `1/dt`. Tick 0 always is.
pub fn snapshot_due(tick: u64, dt: f64, rate: u32) -> bool {
    if tick == 0 {
        return true;
    }
    let tps = (1.0 / dt).round().max(1.0) as u64;
    let rate = u64::from(rate);
    tick * rate / tps != (tick - 1) * rate / tps
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub scenario: Scenario,
    pub snapshot_rate: u32,
    /// Where session logs and trial records go; nothing is written if unset.
    pub record_dir: Option<PathBuf>,
    pub participant_id: String,
}

/// Something for the client. Snapshots may be dropped by a slow transport;
/// messages may not.
#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    Snapshot(StateSnapshot),
    Message(Message),
}

fn error(code: ErrorCode, message: impl Into<String>) -> Outbound {
    Outbound::Message(Message::Error(ErrorBody {
        code,
        message: message.into(),
    }))
}

struct Active {
    driver: TrialDriver,
    attempt: u32,
    camera: bool,
}

pub struct SessionCore {
    opts: SessionOptions,
    session_id: String,
    trial: Option<Active>,
    attempts: u32,
    pedal: PedalState,
    results: Vec<TrialRecord>,
}

impl SessionCore {
    pub fn new(opts: SessionOptions, session_id: impl Into<String>) -> Self {
        SessionCore {
            opts,
            session_id: session_id.into(),
            trial: None,
            attempts: 0,
            pedal: PedalState::default(),
            results: Vec::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn is_running(&self) -> bool {
        self.trial.is_some()
    }

    /// Simulation period of the running trial, or of the scenario when idle.
    pub fn dt(&self) -> f64 {
        self.trial.as_ref().map_or(self.opts.scenario.sim.dt, |t| t.driver.cfg.dt)
    }

    pub fn results(&self) -> &[TrialRecord] {
        &self.results
    }

    pub fn handle(&mut self, msg: Message) -> Vec<Outbound> {
        match msg {
            Message::PedalFrame(f) => self.pedal_frame(&f),
            Message::TrialControl(c) => self.control(c),
            _ => vec![error(ErrorCode::BadMessage, "message type is not accepted from clients")],
        }
    }

    fn pedal_frame(&mut self, f: &PedalFrame) -> Vec<Outbound> {
        self.pedal = f.pedal();
        Vec::new()
    }

    fn control(&mut self, c: TrialControl) -> Vec<Outbound> {
        match c {
            TrialControl::Start { task_id, seed } => self.start(task_id, seed),
            TrialControl::Abort => match &mut self.trial {
                None => vec![error(ErrorCode::InvalidState, "no trial is running")],
                Some(t) => {
                    let action = Action {
                        abort: true,
                        ..Action::default()
                    };
                    if let Err(e) = t.driver.step(&action) {
                        return vec![error(ErrorCode::Internal, e.to_string())];
                    }
                    self.finish()
                }
            },
            TrialControl::Reset => {
                self.trial = None;
                self.pedal = PedalState::default();
                Vec::new()
            }
            TrialControl::SubmitTlx { record } => match self.append_records(&[LogRecord::Tlx(record)]) {
                Ok(()) => Vec::new(),
                Err(e) => vec![error(ErrorCode::Internal, e)],
            },
            TrialControl::CameraInset { visible } => match &mut self.trial {
                Some(t) => {
                    t.camera = visible;
                    Vec::new()
                }
                None => vec![error(ErrorCode::InvalidState, "no trial is running")],
            },
        }
    }

    fn start(&mut self, task_id: TaskId, seed: u64) -> Vec<Outbound> {
        if self.trial.is_some() {
            return vec![error(ErrorCode::InvalidState, "a trial is already running")];
        }
        if !task_id.is_teleoperated() {
            return vec![error(
                ErrorCode::UnsupportedTask,
                "task 1 is hand-guided and cannot be driven over the pedal protocol",
            )];
        }
        let s = &self.opts.scenario;
        let task = if s.task.task_id == task_id {
            s.task.clone()
        } else {
            TaskSpec::for_task(task_id)
        };
        let cfg = SimConfig { seed, ..s.sim.clone() };
        let driver = match TrialDriver::new(&s.model, &s.scene, &s.gains, &task, &cfg) {
            Ok(d) => d,
            Err(e) => return vec![error(ErrorCode::Internal, e.to_string())],
        };
        self.attempts += 1;
        self.pedal = PedalState::default();
        self.trial = Some(Active {
            driver,
            attempt: self.attempts,
            camera: false,
        });
        vec![Outbound::Snapshot(self.snapshot())]
    }

    fn snapshot(&self) -> StateSnapshot {
        let t = self.trial.as_ref().expect("snapshot of a running trial");
        let events = t.driver.events();
        let recent = events[events.len().saturating_sub(RECENT_EVENTS)..].to_vec();
        StateSnapshot::from_state(
            t.attempt,
            t.driver.state(),
            &t.driver.scene,
            t.driver.task.camera_enabled,
            recent,
        )
    }

    /// Advance the running trial one step with the held input.
    pub fn tick(&mut self) -> Vec<Outbound> {
        let Some(t) = &mut self.trial else {
            return Vec::new();
        };
        let action = Action {
            pedal: self.pedal,
            camera_inset: t.camera,
            ..Action::default()
        };
        if let Err(e) = t.driver.step(&action) {
            self.trial = None;
            return vec![error(ErrorCode::Internal, e.to_string())];
        }
        if t.driver.is_finished() {
            return self.finish();
        }
        let s = t.driver.state();
        if snapshot_due(s.tick, t.driver.cfg.dt, self.opts.snapshot_rate) {
            vec![Outbound::Snapshot(self.snapshot())]
        } else {
            Vec::new()
        }
    }

    /// Client went away: a running trial ends as an operator abort.
    pub fn disconnect(&mut self) -> Vec<Outbound> {
        self.handle(Message::TrialControl(TrialControl::Abort))
            .into_iter()
            .filter(|o| !matches!(o, Outbound::Message(Message::Error(e)) if e.code == ErrorCode::InvalidState))
            .collect()
    }

    fn finish(&mut self) -> Vec<Outbound> {
        let mut out = vec![Outbound::Snapshot(self.snapshot())];
        let t = self.trial.take().expect("finish of a running trial");
        let mut record = match t.driver.record(&self.opts.participant_id, t.attempt) {
            Ok(r) => r,
            Err(e) => return vec![error(ErrorCode::Internal, e.to_string())],
        };
        if let Some(dir) = &self.opts.record_dir {
            let path = dir.join(format!("session-{}-{:03}.jsonl", self.session_id, t.attempt));
            let written = std::fs::File::create(&path)
                .map_err(|e| e.to_string())
                .and_then(|f| t.driver.recorder().write(t.driver.state(), BufWriter::new(f)).map_err(|e| e.to_string()));
            match written {
                Ok(()) => record.event_log_ref = Some(path.display().to_string()),
                Err(e) => out.push(error(ErrorCode::Internal, format!("{}: {e}", path.display()))),
            }
        }
        if let Err(e) = self.append_records(&[LogRecord::Trial(record.clone())]) {
            out.push(error(ErrorCode::Internal, e));
        }
        self.results.push(record.clone());
        out.push(Outbound::Message(Message::TrialResult(TrialResult { record })));
        out
    }

    fn append_records(&self, records: &[LogRecord]) -> Result<(), String> {
        let Some(dir) = &self.opts.record_dir else {
            return Ok(());
        };
        let path = dir.join(RECORDS_FILE);
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        write_log(records, BufWriter::new(f)).map(|_| ()).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trocar_core::control::ControlMode;
    use trocar_core::sim::{read_session, replay_session};
    use trocar_core::trial::{read_log, FailureReason};

    fn core(task: TaskId, time_limit: f64, dir: Option<PathBuf>) -> SessionCore {
        let mut scenario = Scenario::default_for_task(task);
        scenario.task.time_limit = time_limit;
        SessionCore::new(
            SessionOptions {
                scenario,
                snapshot_rate: 50,
                record_dir: dir,
                participant_id: "op".into(),
            },
            "t",
        )
    }

    fn start(c: &mut SessionCore, task: TaskId) -> Vec<Outbound> {
        c.handle(Message::TrialControl(TrialControl::Start { task_id: task, seed: 3 }))
    }

    fn pedal(deadman: bool, joystick: [f64; 2]) -> Message {
        Message::PedalFrame(PedalFrame {
            client_timestamp: 0.0,
            buttons: [deadman, false, false, false],
            joystick,
            rocker: 0.0,
        })
    }

    fn result(out: &[Outbound]) -> Option<&TrialRecord> {
        out.iter().find_map(|o| match o {
            Outbound::Message(Message::TrialResult(r)) => Some(&r.record),
            _ => None,
        })
    }

    fn error_code(out: &[Outbound]) -> Option<ErrorCode> {
        out.iter().find_map(|o| match o {
            Outbound::Message(Message::Error(e)) => Some(e.code),
            _ => None,
        })
    }

    #[test]
    fn decimation_hits_the_rate() {
        let count = |rate| (1..=100).filter(|&t| snapshot_due(t, 0.01, rate)).count();
        assert_eq!(count(50), 50);
        assert_eq!(count(100), 100);
        assert_eq!(count(1), 1);
        assert_eq!(count(30), 30);
    }

    #[test]
    fn camera_time_six_of_sixty_seconds() {
        let mut c = core(TaskId::HYBRID_CAMERA, 60.0, None);
        start(&mut c, TaskId::HYBRID_CAMERA);
        let mut last = Vec::new();
        for tick in 0..6000 {
            if tick == 1000 || tick == 1600 {
                c.handle(Message::TrialControl(TrialControl::CameraInset { visible: tick == 1000 }));
            }
            last = c.tick();
        }
        let r = result(&last).expect("timed out at 60 s");
        assert_eq!(r.failure_reason, Some(FailureReason::Timeout));
        assert!((r.camera_view_fraction - 0.10).abs() < 1e-9, "{}", r.camera_view_fraction);
        assert!(!c.is_running());
    }

    #[test]
    fn abort_yields_an_operator_abort_record() {
        let mut c = core(TaskId::HYBRID, 120.0, None);
        start(&mut c, TaskId::HYBRID);
        for _ in 0..10 {
            c.tick();
        }
        let out = c.handle(Message::TrialControl(TrialControl::Abort));
        let r = result(&out).unwrap();
        assert_eq!(r.failure_reason, Some(FailureReason::OperatorAbort));
        assert_eq!(r.attempt_index, 1);
        assert_eq!(error_code(&c.handle(Message::TrialControl(TrialControl::Abort))), Some(ErrorCode::InvalidState));
    }

    #[test]
    fn lifecycle_errors() {
        let mut c = core(TaskId::HYBRID, 120.0, None);
        assert_eq!(error_code(&start(&mut c, TaskId::CO_MANIPULATION)), Some(ErrorCode::UnsupportedTask));
        assert!(matches!(start(&mut c, TaskId::HYBRID)[..], [Outbound::Snapshot(_)]));
        assert_eq!(error_code(&start(&mut c, TaskId::HYBRID)), Some(ErrorCode::InvalidState));
        c.handle(Message::TrialControl(TrialControl::Reset));
        assert!(!c.is_running());
        assert!(c.results().is_empty());
        assert!(c.disconnect().is_empty());
    }

    #[test]
    fn latest_pedal_frame_wins_at_the_boundary() {
        let mut c = core(TaskId::HYBRID, 120.0, None);
        start(&mut c, TaskId::HYBRID);
        c.handle(pedal(true, [0.0, 0.0]));
        c.handle(pedal(false, [0.0, 0.0]));
        c.tick();
        c.tick();
        assert_eq!(c.trial.as_ref().unwrap().driver.state().mode, ControlMode::Hold);
        c.handle(pedal(false, [1.0, 0.0]));
        c.handle(pedal(true, [0.5, 0.0]));
        c.tick();
        let s = c.trial.as_ref().unwrap().driver.state();
        assert_eq!(s.mode, ControlMode::TeleopTranslational);
        assert!(s.dq.norm() > 0.0);
    }

    #[test]
    fn recorded_sessions_replay_and_records_append() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = core(TaskId::HYBRID, 2.0, Some(dir.path().to_path_buf()));
        for _ in 0..2 {
            start(&mut c, TaskId::HYBRID);
            c.handle(pedal(true, [0.3, -0.2]));
            let mut out = Vec::new();
            while c.is_running() {
                out = c.tick();
            }
            let r = result(&out).unwrap();
            let f = std::fs::File::open(r.event_log_ref.as_ref().unwrap()).unwrap();
            let entries = read_session(std::io::BufReader::new(f)).unwrap();
            assert!(replay_session(&entries, |_| {}).unwrap().matches());
        }
        let f = std::fs::File::open(dir.path().join(RECORDS_FILE)).unwrap();
        let log = read_log(std::io::BufReader::new(f)).unwrap();
        assert_eq!(log.len(), 2);
        assert!(matches!(&log[1], LogRecord::Trial(r) if r.attempt_index == 2));
    }
}
