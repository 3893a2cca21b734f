//! Task definitions, outcome adjudication, JSONL trial logs, workload
//! questionnaires and the summary table.

use crate::control::TaskId;
use crate::error::{Error, Result};
use crate::scene::{ContactKind, ExtrusionOutcome};
use crate::sim::{LoggedEvent, SimEvent};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Version written into every log line.
pub const SCHEMA_VERSION: u32 = 1;

/// Default time budget, s.
pub const DEFAULT_TIME_LIMIT: f64 = 120.0;

/// Distance of the handover pose from the TEP, m.
pub const HANDOVER_DISTANCE: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartPose {
    /// Well back from the eye, where co-manipulation starts.
    TrialStartPose,
    /// On the lumen axis, `distance` m before the TEP.
    HandoverPose { distance: f64 },
}

/// Random perturbation of the start pose, drawn from the trial seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartJitter {
    /// Largest lateral displacement, m.
    pub position: f64,
    /// Largest tilt, rad.
    pub angle: f64,
}

impl Default for StartJitter {
    fn default() -> Self {
        StartJitter {
            position: 1.5e-3,
            angle: 4f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub start: StartPose,
    pub camera_enabled: bool,
    /// s
    pub time_limit: f64,
    #[serde(default)]
    pub start_jitter: StartJitter,
    /// When set, every joint limit is narrowed to `start ± window` rad after
    /// the start configuration is solved. Used to stage limit failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_window: Option<f64>,
}

impl TaskSpec {
    pub fn for_task(task_id: TaskId) -> TaskSpec {
        let start = if task_id.is_teleoperated() {
            StartPose::HandoverPose {
                distance: HANDOVER_DISTANCE,
            }
        } else {
            StartPose::TrialStartPose
        };
        TaskSpec {
            task_id,
            start,
            camera_enabled: task_id == TaskId::HYBRID_CAMERA,
            time_limit: DEFAULT_TIME_LIMIT,
            start_jitter: StartJitter::default(),
            limit_window: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let teleop = self.task_id.is_teleoperated();
        match self.start {
            StartPose::TrialStartPose if teleop => {
                return Err(Error::invalid("task", "tasks 2 and 3 start from the handover pose"))
            }
            StartPose::HandoverPose { .. } if !teleop => {
                return Err(Error::invalid("task", "task 1 starts from the trial start pose"))
            }
            StartPose::HandoverPose { distance } if !(distance > 0.0) => {
                return Err(Error::invalid("task", "handover distance must be positive"))
            }
            _ => {}
        }
        if self.camera_enabled != (self.task_id == TaskId::HYBRID_CAMERA) {
            return Err(Error::invalid("task", "the camera is enabled for task 3 only"));
        }
        if !(self.time_limit > 0.0) {
            return Err(Error::invalid("task", "time_limit must be positive"));
        }
        if !(self.start_jitter.position >= 0.0 && self.start_jitter.angle >= 0.0) {
            return Err(Error::invalid("task", "start jitter must be non-negative"));
        }
        if let Some(w) = self.limit_window {
            if !(w > 0.0) {
                return Err(Error::invalid("task", "limit_window must be positive"));
            }
        }
        Ok(())
    }
}

/// Failure reasons in adjudication precedence order, highest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    CorneaContact,
    ExcessiveDeformation,
    JointLimit,
    BlockedExtrusion,
    OperatorAbort,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "reason", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure(FailureReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub task_id: TaskId,
    pub participant_id: String,
    /// 1 is the introductory run.
    pub attempt_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// s
    pub duration: f64,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<FailureReason>,
    pub collision_count: u32,
    /// Share of the trial with the camera inset open; task 3 only.
    pub camera_view_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_log_ref: Option<String>,
    #[serde(default)]
    pub notes: String,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<()> {
        if self.success && self.failure_reason.is_some() {
            return Err(Error::invalid("trial record", "a success carries no failure reason"));
        }
        if !self.success && self.failure_reason.is_none() {
            return Err(Error::invalid("trial record", "a failure needs a reason"));
        }
        if !(self.duration >= 0.0) || !(0.0..=1.0).contains(&self.camera_view_fraction) {
            return Err(Error::invalid("trial record", "duration or camera fraction out of range"));
        }
        Ok(())
    }
}

fn is_disqualifying(event: &SimEvent) -> bool {
    matches!(
        event,
        SimEvent::Contact {
            contact_kind: ContactKind::CorneaContact,
            ..
        } | SimEvent::DeformationExceeded { .. }
    )
}

pub(crate) fn is_terminal(event: &SimEvent) -> bool {
    is_disqualifying(event)
        || matches!(
            event,
            SimEvent::Extrusion { .. } | SimEvent::OperatorAbort | SimEvent::Timeout
        )
}

/// Number of distinct tool–eye contact episodes in a log.
pub fn collision_count(events: &[LoggedEvent]) -> u32 {
    events
        .iter()
        .filter(|e| {
            matches!(
                e.event,
                SimEvent::Contact {
                    contact_kind: ContactKind::CorneaContact | ContactKind::ScleraDeformation,
                    ..
                }
            )
        })
        .count() as u32
}

/// Decide a trial from its ordered event log and the simulated time at which
/// it stopped. Returns the outcome and the time of the terminal event.
pub fn adjudicate(events: &[LoggedEvent], end_time: f64, task: &TaskSpec) -> Result<(Outcome, f64)> {
    for (i, pair) in events.windows(2).enumerate() {
        if pair[1].tick < pair[0].tick || pair[1].time < pair[0].time {
            return Err(Error::Log {
                line: i + 2,
                message: "events out of time order".into(),
            });
        }
    }
    let end = events.iter().position(|e| is_terminal(&e.event));
    let (upto, terminal_time, terminal) = match end {
        // Events raised in the same tick as the terminal one still count.
        Some(i) => {
            let last = events[i..].iter().take_while(|e| e.tick == events[i].tick).count() + i;
            (&events[..last], events[i].time, Some(&events[i].event))
        }
        None if end_time >= task.time_limit => (events, end_time, None),
        None => {
            return Err(Error::Log {
                line: events.len(),
                message: "log ends without a terminal event".into(),
            })
        }
    };
    let seen = |pred: &dyn Fn(&SimEvent) -> bool| upto.iter().any(|e| pred(&e.event));
    let reason = if seen(&|e| {
        matches!(
            e,
            SimEvent::Contact {
                contact_kind: ContactKind::CorneaContact,
                ..
            }
        )
    }) {
        FailureReason::CorneaContact
    } else if seen(&|e| matches!(e, SimEvent::DeformationExceeded { .. })) {
        FailureReason::ExcessiveDeformation
    } else {
        match terminal {
            Some(SimEvent::Extrusion {
                outcome: ExtrusionOutcome::Inserted,
            }) if terminal_time <= task.time_limit => return Ok((Outcome::Success, terminal_time)),
            Some(SimEvent::Extrusion {
                outcome: ExtrusionOutcome::Blocked,
            }) => FailureReason::BlockedExtrusion,
            Some(SimEvent::OperatorAbort) | Some(SimEvent::Timeout) | None
                if seen(&|e| matches!(e, SimEvent::JointLimit { position_joints, .. } if !position_joints.is_empty())) =>
            {
                FailureReason::JointLimit
            }
            Some(SimEvent::OperatorAbort) => FailureReason::OperatorAbort,
            _ => FailureReason::Timeout,
        }
    };
    Ok((Outcome::Failure(reason), terminal_time))
}

/// The six workload scales, each in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TlxRepr")]
pub struct TlxRecord {
    pub participant_id: String,
    pub task_id: TaskId,
    pub mental: f64,
    pub physical: f64,
    pub temporal: f64,
    pub performance: f64,
    pub effort: f64,
    pub frustration: f64,
}

#[derive(Deserialize)]
struct TlxRepr {
    participant_id: String,
    task_id: TaskId,
    mental: f64,
    physical: f64,
    temporal: f64,
    performance: f64,
    effort: f64,
    frustration: f64,
}

impl TryFrom<TlxRepr> for TlxRecord {
    type Error = Error;
    fn try_from(r: TlxRepr) -> Result<Self> {
        TlxRecord::new(
            r.participant_id,
            r.task_id,
            [r.mental, r.physical, r.temporal, r.performance, r.effort, r.frustration],
        )
    }
}

pub const TLX_DIMENSIONS: [&str; 6] = ["mental", "physical", "temporal", "performance", "effort", "frustration"];

impl TlxRecord {
    /// Scales in [`TLX_DIMENSIONS`] order.
    pub fn new(participant_id: impl Into<String>, task_id: TaskId, scales: [f64; 6]) -> Result<Self> {
        if let Some(i) = scales.iter().position(|v| !(0.0..=100.0).contains(v)) {
            return Err(Error::invalid(
                "tlx record",
                format!("{} = {} outside [0, 100]", TLX_DIMENSIONS[i], scales[i]),
            ));
        }
        let [mental, physical, temporal, performance, effort, frustration] = scales;
        Ok(TlxRecord {
            participant_id: participant_id.into(),
            task_id,
            mental,
            physical,
            temporal,
            performance,
            effort,
            frustration,
        })
    }

    pub fn scales(&self) -> [f64; 6] {
        [
            self.mental,
            self.physical,
            self.temporal,
            self.performance,
            self.effort,
            self.frustration,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlxMeans {
    pub count: usize,
    /// In [`TLX_DIMENSIONS`] order.
    pub means: [f64; 6],
}

/// Per-task, per-dimension arithmetic means. Tasks without records are absent.
pub fn aggregate_tlx(records: &[TlxRecord]) -> BTreeMap<TaskId, TlxMeans> {
    let mut sums: BTreeMap<TaskId, (usize, [f64; 6])> = BTreeMap::new();
    for r in records {
        let entry = sums.entry(r.task_id).or_insert((0, [0.0; 6]));
        entry.0 += 1;
        for (acc, v) in entry.1.iter_mut().zip(r.scales()) {
            *acc += v;
        }
    }
    sums.into_iter()
        .map(|(task, (count, s))| {
            let means = s.map(|v| v / count as f64);
            (task, TlxMeans { count, means })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SummaryOptions {
    /// Keep attempts with `attempt_index == 1`.
    pub include_intro: bool,
    /// Average durations over successful attempts only.
    pub successes_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: TaskId,
    pub attempts: usize,
    pub successes: usize,
    /// s; absent when no attempt is timed.
    pub mean_time: Option<f64>,
    /// Sample SD, s; absent below two timed attempts.
    pub sd_time: Option<f64>,
    pub success_rate_pct: u8,
    pub collisions: u64,
    pub tlx: Option<TlxMeans>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryReport {
    pub tasks: Vec<TaskSummary>,
}

/// `round(100·k/n)`, halves rounded up, in exact integer arithmetic.
pub fn success_rate_pct(successes: usize, attempts: usize) -> u8 {
    if attempts == 0 {
        return 0;
    }
    ((200 * successes + attempts) / (2 * attempts)) as u8
}

/// Mean and sample standard deviation (n − 1).
pub fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (Some(mean), Some((ss / (n - 1.0)).sqrt()))
}

pub fn summarize(records: &[TrialRecord], tlx: &[TlxRecord], opts: SummaryOptions) -> SummaryReport {
    let mut by_task: BTreeMap<TaskId, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        if opts.include_intro || r.attempt_index != 1 {
            by_task.entry(r.task_id).or_default().push(r);
        }
    }
    let mut tlx_means = aggregate_tlx(tlx);
    let tasks = by_task
        .into_iter()
        .map(|(task_id, rs)| {
            let successes = rs.iter().filter(|r| r.success).count();
            let times: Vec<f64> = rs
                .iter()
                .filter(|r| !opts.successes_only || r.success)
                .map(|r| r.duration)
                .collect();
            let (mean_time, sd_time) = mean_sd(&times);
            TaskSummary {
                task_id,
                attempts: rs.len(),
                successes,
                mean_time,
                sd_time,
                success_rate_pct: success_rate_pct(successes, rs.len()),
                collisions: rs.iter().map(|r| r.collision_count as u64).sum(),
                tlx: tlx_means.remove(&task_id),
            }
        })
        .collect();
    SummaryReport { tasks }
}

/// One line of a JSONL log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Trial(TrialRecord),
    Tlx(TlxRecord),
    Event(LoggedEvent),
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    schema_version: u32,
    #[serde(flatten)]
    record: LogRecord,
}

/// Append records as JSON Lines. Returns the bytes written.
pub fn write_log<W: Write>(records: &[LogRecord], mut out: W) -> Result<usize> {
    let mut written = 0;
    for record in records {
        let mut line = serde_json::to_vec(&LogLine {
            schema_version: SCHEMA_VERSION,
            record: record.clone(),
        })
        .map_err(|e| Error::Io(e.to_string()))?;
        line.push(b'\n');
        out.write_all(&line)?;
        written += line.len();
    }
    out.flush()?;
    Ok(written)
}

/// Parse a JSON Lines log. Blank lines are skipped; errors name the 1-based line.
pub fn read_log<R: BufRead>(input: R) -> Result<Vec<LogRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| Error::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        if parsed.schema_version != SCHEMA_VERSION {
            return Err(Error::Log {
                line: i + 1,
                message: format!("unsupported schema_version {}", parsed.schema_version),
            });
        }
        if let LogRecord::Trial(r) = &parsed.record {
            r.validate().map_err(|e| Error::Log {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        records.push(parsed.record);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::invalid("report format", format!("unknown format {other:?}"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 13] = [
    "task",
    "attempts",
    "successes",
    "mean_time_s",
    "sd_time_s",
    "success_rate_pct",
    "collisions",
    "tlx_mental",
    "tlx_physical",
    "tlx_temporal",
    "tlx_performance",
    "tlx_effort",
    "tlx_frustration",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn render_report(report: &SummaryReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_csv(report: &SummaryReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for t in &report.tasks {
        let mut row = vec![
            t.task_id.to_string(),
            t.attempts.to_string(),
            t.successes.to_string(),
            opt(t.mean_time),
            opt(t.sd_time),
            t.success_rate_pct.to_string(),
            t.collisions.to_string(),
        ];
        for i in 0..6 {
            row.push(opt(t.tlx.as_ref().map(|m| m.means[i])));
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

fn render_markdown(report: &SummaryReport) -> String {
    let mut out = String::from(
        "| Task | Average Time (s) | Success rate (%) | Attempts | Collisions \
         | Mental | Physical | Temporal | Performance | Effort | Frustration |\n\
         |---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for t in &report.tasks {
        let time = match (t.mean_time, t.sd_time) {
            (Some(m), Some(sd)) => format!("{m:.1} (SD = {sd:.1})"),
            (Some(m), None) => format!("{m:.1}"),
            _ => "-".to_string(),
        };
        let tlx: Vec<String> = (0..6)
            .map(|i| t.tlx.as_ref().map_or("-".to_string(), |m| format!("{:.1}", m.means[i])))
            .collect();
        out.push_str(&format!(
            "| Task {} | {} | {} | {} | {} | {} |\n",
            t.task_id,
            time,
            t.success_rate_pct,
            t.attempts,
            t.collisions,
            tlx.join(" | ")
        ));
    }
    out
}
