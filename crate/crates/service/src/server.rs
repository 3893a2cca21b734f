//! WebSocket session server.
//!
//! Each connection gets a simulation thread paced against the wall clock.
//! Inbound frames reach it through an ordered queue drained at tick
//! boundaries. Snapshots leave through a watch channel, so a slow client
//! sees the latest one and the tick loop never waits on the socket; results
//! and errors use an unbounded queue and are never dropped.

use crate::protocol::{Envelope, ErrorBody, ErrorCode, Message, StateSnapshot};
use crate::session::{snapshot_due, Outbound, SessionCore, SessionOptions};
use futures_util::{SinkExt, StreamExt};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc as tmpsc, watch};
use tokio_tungstenite::tungstenite::Message as WsMessage;
use trocar_core::sim::{Replay, SessionEntry};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub session: SessionOptions,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

enum Inbound {
    Message(Box<Message>),
    Disconnect,
}

struct Outlets {
    session_id: String,
    snapshots: watch::Sender<Option<Arc<String>>>,
    messages: tmpsc::UnboundedSender<String>,
}

impl Outlets {
    fn emit(&self, out: Vec<Outbound>) {
        for o in out {
            match o {
                Outbound::Snapshot(s) => self.snapshot(s),
                Outbound::Message(m) => {
                    let _ = self.messages.send(Envelope::new(&self.session_id, m).to_json());
                }
            }
        }
    }

    fn snapshot(&self, s: StateSnapshot) {
        let text = Envelope::new(&self.session_id, Message::StateSnapshot(s)).to_json();
        self.snapshots.send_replace(Some(Arc::new(text)));
    }
}

/// Fixed-rate pacer that resynchronises instead of bursting after a stall.
struct Pacer {
    period: Duration,
    next: Instant,
}

impl Pacer {
    fn new(dt: f64, speed: f64) -> Self {
        Pacer {
            period: Duration::from_secs_f64(dt / speed),
            next: Instant::now(),
        }
    }

    fn wait(&mut self) {
        self.next += self.period;
        let now = Instant::now();
        if self.next > now {
            std::thread::sleep(self.next - now);
        } else if now - self.next > Duration::from_millis(250) {
            self.next = now;
        }
    }

    fn reset(&mut self) {
        self.next = Instant::now();
    }
}

fn sim_loop(mut core: SessionCore, inbound: mpsc::Receiver<Inbound>, out: Outlets, speed: f64) {
    let mut pacer = Pacer::new(core.dt(), speed);
    loop {
        if !core.is_running() {
            match inbound.recv_timeout(Duration::from_millis(50)) {
                Ok(Inbound::Message(m)) => out.emit(core.handle(*m)),
                Ok(Inbound::Disconnect) | Err(mpsc::RecvTimeoutError::Disconnected) => return,
                Err(mpsc::RecvTimeoutError::Timeout) => {}
            }
            pacer = Pacer::new(core.dt(), speed);
            pacer.reset();
            continue;
        }
        loop {
            match inbound.try_recv() {
                Ok(Inbound::Message(m)) => out.emit(core.handle(*m)),
                Ok(Inbound::Disconnect) | Err(mpsc::TryRecvError::Disconnected) => {
                    out.emit(core.disconnect());
                    return;
                }
                Err(mpsc::TryRecvError::Empty) => break,
            }
        }
        out.emit(core.tick());
        pacer.wait();
    }
}

fn error_json(session_id: &str, code: ErrorCode, message: impl Into<String>) -> String {
    Envelope::new(
        session_id,
        Message::Error(ErrorBody {
            code,
            message: message.into(),
        }),
    )
    .to_json()
}

struct BusyGuard(Arc<AtomicBool>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

/// Accept connections until the listener fails. One session at a time; a
/// second connection is told `busy` and closed.
pub async fn serve(listener: TcpListener, cfg: ServeConfig) -> std::io::Result<()> {
    let busy = Arc::new(AtomicBool::new(false));
    let counter = Arc::new(AtomicU64::new(0));
    loop {
        let (stream, peer) = listener.accept().await?;
        log::info!("connection from {peer}");
        let cfg = cfg.clone();
        let busy = busy.clone();
        let id = counter.fetch_add(1, Ordering::SeqCst) + 1;
        tokio::spawn(async move {
            if let Err(e) = connection(stream, cfg, busy, format!("s{id}")).await {
                log::warn!("session s{id}: {e}");
            }
        });
    }
}

async fn connection(
    stream: TcpStream,
    cfg: ServeConfig,
    busy: Arc<AtomicBool>,
    session_id: String,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let mut ws = tokio_tungstenite::accept_async(stream).await?;
    if busy.swap(true, Ordering::SeqCst) {
        let text = error_json(&session_id, ErrorCode::Busy, "another session is active");
        ws.send(WsMessage::text(text)).await?;
        ws.close(None).await?;
        return Ok(());
    }
    let _guard = BusyGuard(busy);
    let (mut sink, mut source) = ws.split();
    let (in_tx, in_rx) = mpsc::channel();
    let (snap_tx, mut snap_rx) = watch::channel(None::<Arc<String>>);
    let (msg_tx, mut msg_rx) = tmpsc::unbounded_channel::<String>();

    let core = SessionCore::new(cfg.session.clone(), session_id.clone());
    let outlets = Outlets {
        session_id: session_id.clone(),
        snapshots: snap_tx,
        messages: msg_tx.clone(),
    };
    let speed = cfg.speed;
    let sim = std::thread::spawn(move || sim_loop(core, in_rx, outlets, speed));

    let writer = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                biased;
                changed = snap_rx.changed() => match changed {
                    Ok(()) => match snap_rx.borrow_and_update().clone() {
                        Some(s) => s.as_str().to_owned(),
                        None => continue,
                    },
                    // Simulation gone; flush what is queued.
                    Err(_) => match msg_rx.recv().await {
                        Some(m) => m,
                        None => break,
                    },
                },
                m = msg_rx.recv() => match m {
                    Some(m) => m,
                    None => break,
                },
            };
            if sink.send(WsMessage::text(text)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(frame) = source.next().await {
        let text = match frame {
            Ok(WsMessage::Text(t)) => t,
            Ok(WsMessage::Close(_)) | Err(_) => break,
            Ok(WsMessage::Binary(_)) => {
                let _ = msg_tx.send(error_json(&session_id, ErrorCode::BadMessage, "binary frames are not accepted"));
                continue;
            }
            Ok(_) => continue,
        };
        match Envelope::parse(text.as_str()) {
            Ok(env) if !env.session_id.is_empty() && env.session_id != session_id => {
                let _ = msg_tx.send(error_json(&session_id, ErrorCode::BadMessage, "session_id does not match"));
            }
            Ok(env) => {
                if in_tx.send(Inbound::Message(Box::new(env.body))).is_err() {
                    break;
                }
            }
            Err(e) => {
                let _ = msg_tx.send(error_json(&session_id, ErrorCode::BadMessage, e));
            }
        }
    }
    let _ = in_tx.send(Inbound::Disconnect);
    drop(msg_tx);
    let _ = tokio::task::spawn_blocking(move || sim.join()).await;
    writer.abort();
    log::info!("session {session_id} closed");
    Ok(())
}

/// Wait for one client, then re-drive `entries` at `speed`× real time while
/// streaming snapshots to it.
pub async fn stream_replay(
    listener: TcpListener,
    entries: Vec<SessionEntry>,
    speed: f64,
    snapshot_rate: u32,
) -> Result<Replay, String> {
    let (stream, _) = listener.accept().await.map_err(|e| e.to_string())?;
    let ws = tokio_tungstenite::accept_async(stream).await.map_err(|e| e.to_string())?;
    let (mut sink, _source) = ws.split();
    let (snap_tx, mut snap_rx) = watch::channel(None::<Arc<String>>);
    let replay = tokio::task::spawn_blocking(move || {
        let mut pacer: Option<Pacer> = None;
        trocar_core::sim::replay_session(&entries, |driver| {
            let p = pacer.get_or_insert_with(|| Pacer::new(driver.cfg.dt, speed));
            let s = driver.state();
            if snapshot_due(s.tick, driver.cfg.dt, snapshot_rate) || driver.is_finished() {
                let events = driver.events();
                let recent = events[events.len().saturating_sub(16)..].to_vec();
                let snap = StateSnapshot::from_state(1, s, &driver.scene, driver.task.camera_enabled, recent);
                let text = Envelope::new("replay", Message::StateSnapshot(snap)).to_json();
                snap_tx.send_replace(Some(Arc::new(text)));
            }
            p.wait();
        })
        .map_err(|e| e.to_string())
    });
    let writer = tokio::spawn(async move {
        while snap_rx.changed().await.is_ok() {
            let Some(text) = snap_rx.borrow_and_update().clone() else {
                continue;
            };
            if sink.send(WsMessage::text(text.as_str().to_owned())).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });
    let result = replay.await.map_err(|e| e.to_string())?;
    let _ = writer.await;
    result
}
