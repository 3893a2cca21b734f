//! Session recording and deterministic replay.
//!
//! A session file is JSONL: one header line with the full configuration and
//! start configuration, one line per tick of operator input, and an end line
//! with a hash of the final simulation state.

use super::operator::Action;
use super::run::TrialDriver;
use super::{LoggedEvent, SimConfig, SimState};
use crate::arm_model::{ArmModel, JointVector};
use crate::control::Gains;
use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::trial::{TaskSpec, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub schema_version: u32,
    /// Model as simulated, limits already narrowed.
    pub model: ArmModel,
    pub scene: Scene,
    pub gains: Gains,
    pub task: TaskSpec,
    pub sim: SimConfig,
    pub start_q: JointVector,
}

impl SessionHeader {
    pub fn new(
        model: &ArmModel,
        scene: &Scene,
        gains: &Gains,
        task: &TaskSpec,
        sim: &SimConfig,
        start_q: &JointVector,
    ) -> Self {
        SessionHeader {
            schema_version: SCHEMA_VERSION,
            model: model.clone(),
            scene: scene.clone(),
            gains: gains.clone(),
            task: task.clone(),
            sim: sim.clone(),
            start_q: start_q.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // one header per file; inputs dominate
pub enum SessionEntry {
    Header(SessionHeader),
    Input { tick: u64, action: Action },
    End { ticks: u64, state_hash: String },
}

/// Hex SHA-256 of the state's JSON form.
pub fn state_hash(state: &SimState) -> String {
    let bytes = serde_json::to_vec(state).expect("state serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Accumulates a session while it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Recorder {
    header: SessionHeader,
    inputs: Vec<(u64, Action)>,
}

impl Recorder {
    pub fn new(header: SessionHeader) -> Self {
        Recorder {
            header,
            inputs: Vec::new(),
        }
    }

    pub fn header(&self) -> &SessionHeader {
        &self.header
    }

    pub fn push(&mut self, tick: u64, action: &Action) {
        self.inputs.push((tick, action.clone()));
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn entries(&self, final_state: &SimState) -> Vec<SessionEntry> {
        let mut out = Vec::with_capacity(self.inputs.len() + 2);
        out.push(SessionEntry::Header(self.header.clone()));
        out.extend(self.inputs.iter().map(|(tick, action)| SessionEntry::Input {
            tick: *tick,
            action: action.clone(),
        }));
        out.push(SessionEntry::End {
            ticks: final_state.tick,
            state_hash: state_hash(final_state),
        });
        out
    }

    pub fn write<W: Write>(&self, final_state: &SimState, mut out: W) -> Result<()> {
        for e in self.entries(final_state) {
            serde_json::to_writer(&mut out, &e).map_err(|e| Error::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn read_session<R: BufRead>(input: R) -> Result<Vec<SessionEntry>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: SessionEntry = serde_json::from_str(&line).map_err(|e| Error::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

/// Result of re-driving a recorded session.
#[derive(Debug, Clone)]
pub struct Replay {
    pub final_state: SimState,
    pub events: Vec<LoggedEvent>,
    pub expected_hash: String,
    pub state_hash: String,
}

impl Replay {
    pub fn matches(&self) -> bool {
        self.expected_hash == self.state_hash
    }
}

/// Re-run the recorded inputs. `on_tick` sees the driver after every input.
/// A missing header or end line, or inputs out of sequence, is an error; a
/// hash mismatch is reported through [`Replay::matches`].
pub fn replay_session(entries: &[SessionEntry], mut on_tick: impl FnMut(&TrialDriver)) -> Result<Replay> {
    let log_err = |line: usize, message: &str| Error::Log {
        line,
        message: message.to_string(),
    };
    let header = match entries.first() {
        Some(SessionEntry::Header(h)) => h,
        _ => return Err(log_err(1, "session must start with a header")),
    };
    if header.schema_version != SCHEMA_VERSION {
        return Err(log_err(1, &format!("unsupported schema_version {}", header.schema_version)));
    }
    let mut driver = TrialDriver::from_header(header)?;
    for (i, e) in entries.iter().enumerate().skip(1) {
        match e {
            SessionEntry::Input { tick, action } => {
                if *tick != driver.state().tick || driver.is_finished() {
                    return Err(log_err(i + 1, "input out of sequence"));
                }
                driver.step(action)?;
                on_tick(&driver);
            }
            SessionEntry::End { ticks, state_hash: expected } => {
                if i + 1 != entries.len() {
                    return Err(log_err(i + 2, "entries after the end line"));
                }
                if *ticks != driver.state().tick {
                    return Err(log_err(i + 1, "tick count does not match the inputs"));
                }
                let state = driver.state().clone();
                return Ok(Replay {
                    state_hash: state_hash(&state),
                    expected_hash: expected.clone(),
                    final_state: state,
                    events: driver.events().to_vec(),
                });
            }
            SessionEntry::Header(_) => return Err(log_err(i + 1, "second header")),
        }
    }
    Err(log_err(entries.len(), "session is truncated: no end line"))
}
