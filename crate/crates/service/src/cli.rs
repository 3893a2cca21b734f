//! `trocar-dock` subcommands. Each returns the process exit status.

use crate::server::{serve, stream_replay, ServeConfig};
use crate::session::SessionOptions;
use clap::{Parser, Subcommand, ValueEnum};
use std::fs::OpenOptions;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;
use trocar_core::batch::{run_trials, trial_seed};
use trocar_core::control::TaskId;
use trocar_core::scenario::Scenario;
use trocar_core::sim::{read_session, replay_session, state_hash};
use trocar_core::trial::{read_log, render_report, summarize, write_log, LogRecord, ReportFormat, SummaryOptions};

pub const EXIT_INVALID: i32 = 2;
pub const EXIT_OUTPUT: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;
const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "trocar-dock", version, about = "Robotic trocar docking simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Markdown,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded virtual-operator trials and append their records.
    Simulate {
        /// Scenario JSON; the built-in scenario for --task when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        task: Option<u8>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSONL output, appended to.
        #[arg(long)]
        out: PathBuf,
        /// Write one replayable session log per trial here.
        #[arg(long)]
        record_dir: Option<PathBuf>,
    },
    /// Summarise a JSONL log per task.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        /// Count each participant's first attempt.
        #[arg(long)]
        include_intro: bool,
        /// Average durations over successful attempts only.
        #[arg(long)]
        successes_only: bool,
    },
    /// Re-drive a recorded session and check its final state hash.
    Replay {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Stream the replay to one WebSocket client.
        #[arg(long)]
        serve: bool,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..=100))]
        snapshot_rate: u32,
    },
    /// Serve interactive sessions over WebSocket.
    Serve {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        task: Option<u8>,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..=100))]
        snapshot_rate: u32,
        #[arg(long)]
        record_dir: Option<PathBuf>,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
}

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    code
}

fn load_scenario(path: Option<&Path>, task: Option<u8>) -> Result<Scenario, String> {
    let task = task.map(TaskId::new).transpose().map_err(|e| e.to_string())?;
    match (path, task) {
        (Some(p), t) => Scenario::load(p, t).map_err(|e| format!("{}: {e}", p.display())),
        (None, Some(t)) => Ok(Scenario::default_for_task(t)),
        (None, None) => Err("either --scenario or --task is required".into()),
    }
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Simulate {
            scenario,
            task,
            trials,
            seed,
            out,
            record_dir,
        } => simulate(scenario.as_deref(), task, trials, seed, &out, record_dir.as_deref()),
        Command::Report {
            input,
            format,
            include_intro,
            successes_only,
        } => report(&input, format, SummaryOptions { include_intro, successes_only }),
        Command::Replay {
            input,
            speed,
            serve,
            port,
            snapshot_rate,
        } => replay(&input, speed, serve.then_some((port, snapshot_rate))),
        Command::Serve {
            scenario,
            task,
            port,
            snapshot_rate,
            record_dir,
            speed,
        } => serve_cmd(scenario.as_deref(), task, port, snapshot_rate, record_dir, speed),
    }
}

pub fn simulate(
    scenario: Option<&Path>,
    task: Option<u8>,
    trials: usize,
    seed: u64,
    out: &Path,
    record_dir: Option<&Path>,
) -> i32 {
    let scenario = match load_scenario(scenario, task) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INVALID, e),
    };
    let file = match OpenOptions::new().create(true).append(true).open(out) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_OUTPUT, format!("{}: {e}", out.display())),
    };
    if let Some(dir) = record_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            return fail(EXIT_OUTPUT, format!("{}: {e}", dir.display()));
        }
    }
    let started = Instant::now();
    let runs = match run_trials(&scenario, trials, seed) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let mut records = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let mut record = run.record.clone();
        if let Some(dir) = record_dir {
            let path = dir.join(format!("{}-seed{}.session.jsonl", scenario.name, trial_seed(seed, i)));
            let written = std::fs::File::create(&path)
                .map_err(|e| e.to_string())
                .and_then(|f| run.recorder.write(&run.final_state, BufWriter::new(f)).map_err(|e| e.to_string()));
            if let Err(e) = written {
                return fail(EXIT_OUTPUT, format!("{}: {e}", path.display()));
            }
            record.event_log_ref = Some(path.display().to_string());
        }
        records.push(LogRecord::Trial(record));
    }
    if let Err(e) = write_log(&records, BufWriter::new(file)) {
        return fail(EXIT_OUTPUT, format!("{}: {e}", out.display()));
    }
    let ok = runs.iter().filter(|r| r.record.success).count();
    let durations: Vec<f64> = runs.iter().map(|r| r.record.duration).collect();
    let mean = if durations.is_empty() {
        0.0
    } else {
        durations.iter().sum::<f64>() / durations.len() as f64
    };
    let max = durations.iter().copied().fold(0.0, f64::max);
    println!(
        "{}: task {} trials {} succeeded {} mean {:.2} s max {:.2} s collisions {} wall {:.2} s",
        scenario.name,
        scenario.task.task_id,
        runs.len(),
        ok,
        mean,
        max,
        runs.iter().map(|r| u64::from(r.record.collision_count)).sum::<u64>(),
        started.elapsed().as_secs_f64()
    );
    0
}

pub fn report(input: &Path, format: Format, opts: SummaryOptions) -> i32 {
    let file = match std::fs::File::open(input) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_INVALID, format!("{}: {e}", input.display())),
    };
    let log = match read_log(BufReader::new(file)) {
        Ok(l) => l,
        Err(e) => return fail(EXIT_INVALID, format!("{}: {e}", input.display())),
    };
    let mut trials = Vec::new();
    let mut tlx = Vec::new();
    for r in log {
        match r {
            LogRecord::Trial(t) => trials.push(t),
            LogRecord::Tlx(t) => tlx.push(t),
            LogRecord::Event(_) => {}
        }
    }
    let format = match format {
        Format::Csv => ReportFormat::Csv,
        Format::Markdown => ReportFormat::Markdown,
    };
    print!("{}", render_report(&summarize(&trials, &tlx, opts), format));
    let _ = std::io::stdout().flush();
    0
}

pub fn replay(input: &Path, speed: f64, serve: Option<(u16, u32)>) -> i32 {
    if !(speed > 0.0 && speed.is_finite()) {
        return fail(EXIT_INVALID, format!("--speed must be positive, got {speed}"));
    }
    let file = match std::fs::File::open(input) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_INVALID, format!("{}: {e}", input.display())),
    };
    let entries = match read_session(BufReader::new(file)) {
        Ok(e) => e,
        Err(e) => return fail(EXIT_INVALID, format!("{}: {e}", input.display())),
    };
    let result = match serve {
        None => replay_session(&entries, |_| {}).map_err(|e| e.to_string()),
        Some((port, rate)) => runtime().and_then(|rt| {
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
                    .await
                    .map_err(|e| e.to_string())?;
                eprintln!("replay waiting on ws://{}", listener.local_addr().map_err(|e| e.to_string())?);
                stream_replay(listener, entries, speed, rate).await
            })
        }),
    };
    let r = match result {
        Ok(r) => r,
        Err(e) => return fail(EXIT_INVALID, format!("{}: {e}", input.display())),
    };
    println!(
        "{}: ticks {} hash {} {}",
        input.display(),
        r.final_state.tick,
        state_hash(&r.final_state),
        if r.matches() { "match" } else { "MISMATCH" }
    );
    if r.matches() {
        0
    } else {
        fail(EXIT_MISMATCH, format!("recorded hash {} differs", r.expected_hash))
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, String> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())
}

fn serve_cmd(
    scenario: Option<&Path>,
    task: Option<u8>,
    port: u16,
    snapshot_rate: u32,
    record_dir: Option<PathBuf>,
    speed: f64,
) -> i32 {
    let scenario = match load_scenario(scenario, task.or(Some(2))) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INVALID, e),
    };
    if !(speed > 0.0 && speed.is_finite()) {
        return fail(EXIT_INVALID, format!("--speed must be positive, got {speed}"));
    }
    if let Some(dir) = &record_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            return fail(EXIT_OUTPUT, format!("{}: {e}", dir.display()));
        }
    }
    let cfg = ServeConfig {
        session: SessionOptions {
            scenario,
            snapshot_rate,
            record_dir,
            participant_id: "operator".into(),
        },
        speed,
    };
    let rt = match runtime() {
        Ok(rt) => rt,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    let result: Result<(), String> = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| e.to_string())?;
        eprintln!("serving on ws://{}", listener.local_addr().map_err(|e| e.to_string())?);
        serve(listener, cfg).await.map_err(|e| e.to_string())
    });
    match result {
        Ok(()) => 0,
        Err(e) => fail(EXIT_RUNTIME, e),
    }
}
