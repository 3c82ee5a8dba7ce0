//! WebSocket teleoperation service.
//!
//! One world per process. A dedicated thread owns the [`Session`] and ticks it
//! at a fixed wall-clock rate; connections talk to it only through queues:
//!
//! - client messages go into one ordered command queue and are applied at the
//!   next tick boundary, in arrival order;
//! - state frames are published through a latest-wins channel, so a slow
//!   client skips frames instead of holding the tick loop back;
//! - events and errors go through an unbounded per-client channel and are
//!   never dropped.
//!
//! Every connection receives `hello` first, then state frames at its
//! subscribed rate (the tick rate until it sends `subscribe`). Malformed
//! messages are answered with `error{bad_request}` and the connection stays
//! open. The server closes every connection with a close frame on shutdown.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tapegrip_core::protocol::{
    ClientMessage, Command, ConfigSummary, ErrorCode, ServerMessage, StateFrame, PROTOCOL_VERSION,
};
use tapegrip_core::scenario::{ConfigSource, Scenario, ScriptEntry};
use tapegrip_core::session::{CommandError, Session};
use tapegrip_core::sim::InitialPose;
use tapegrip_core::SimConfig;
use thiserror::Error;
use tokio::net::{TcpListener, ToSocketAddrs};
use tokio::sync::{mpsc, watch};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("tick rate must be a positive finite number of Hz, got {0}")]
    InvalidTickRate(f64),
    #[error("cannot create the world: {0}")]
    World(String),
    #[error("cannot bind: {0}")]
    Bind(std::io::Error),
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("tick loop panicked")]
    TickLoop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Wall-clock tick rate; each tick advances the world by `tick_dt`.
    pub tick_hz: f64,
    /// Keep every applied message for [`Server::shutdown`].
    pub record: bool,
    /// Also keep the snapshot of every tick (about 2 kB each).
    pub keep_snapshots: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { tick_hz: 50.0, record: false, keep_snapshots: false }
    }
}

/// What a recorded server session did: a scenario that replays it and the
/// snapshot log it produced (initial world plus one line per tick).
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub scenario: Scenario,
    pub snapshots: Vec<String>,
}

enum Inbound {
    Connect { id: u64, tx: mpsc::UnboundedSender<ServerMessage> },
    Disconnect { id: u64 },
    Message { id: u64, message: ClientMessage },
    Shutdown,
}

#[derive(Clone)]
struct Shared {
    commands: mpsc::UnboundedSender<Inbound>,
    state: watch::Receiver<Arc<StateFrame>>,
    shutdown: watch::Receiver<bool>,
    hello: Arc<ServerMessage>,
    tick_period: Duration,
    next_id: Arc<AtomicU64>,
}

/// A running service. Dropping it without [`Server::shutdown`] stops the
/// tick loop but discards the recording.
pub struct Server {
    addr: SocketAddr,
    commands: mpsc::UnboundedSender<Inbound>,
    shutdown: watch::Sender<bool>,
    tick: Option<JoinHandle<Recording>>,
    http: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl Server {
    /// Binds the listener and starts the tick loop and the HTTP server. The
    /// WebSocket endpoint is `/ws`.
    pub async fn bind(
        addr: impl ToSocketAddrs,
        config: SimConfig,
        initial: InitialPose,
        options: ServeOptions,
    ) -> Result<Self, ServeError> {
        if !(options.tick_hz > 0.0 && options.tick_hz.is_finite()) {
            return Err(ServeError::InvalidTickRate(options.tick_hz));
        }
        let session = Session::new(config.clone(), initial).map_err(|e| ServeError::World(e.to_string()))?;
        let listener = TcpListener::bind(addr).await.map_err(ServeError::Bind)?;
        let addr = listener.local_addr()?;

        let (commands, inbox) = mpsc::unbounded_channel();
        let (state_tx, state_rx) = watch::channel(Arc::new(session.frame()));
        let (shutdown, shutdown_rx) = watch::channel(false);
        let tick_period = Duration::from_secs_f64(1.0 / options.tick_hz);
        let tick = std::thread::Builder::new()
            .name("tapegrip-tick".into())
            .spawn(move || tick_loop(session, initial, inbox, state_tx, tick_period, options))?;

        let shared = Shared {
            commands: commands.clone(),
            state: state_rx,
            shutdown: shutdown_rx.clone(),
            hello: Arc::new(ServerMessage::Hello {
                protocol_version: PROTOCOL_VERSION,
                config: ConfigSummary::from(&config),
            }),
            tick_period,
            next_id: Arc::new(AtomicU64::new(0)),
        };
        let app = Router::new().route("/ws", get(upgrade)).with_state(shared);
        let mut stop = shutdown_rx;
        let http = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stop.wait_for(|s| *s).await;
                })
                .await
        });
        tracing::info!(%addr, "teleop service listening");
        Ok(Self { addr, commands, shutdown, tick: Some(tick), http: Some(http) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Closes every connection, stops the tick loop and returns what was
    /// recorded (empty unless [`ServeOptions::record`] or
    /// [`ServeOptions::keep_snapshots`] was set).
    pub async fn shutdown(mut self) -> Result<Recording, ServeError> {
        let _ = self.shutdown.send(true);
        let _ = self.commands.send(Inbound::Shutdown);
        if let Some(http) = self.http.take() {
            http.await.map_err(|_| ServeError::TickLoop)??;
        }
        let tick = self.tick.take().expect("tick loop joined once");
        tokio::task::spawn_blocking(move || tick.join())
            .await
            .map_err(|_| ServeError::TickLoop)?
            .map_err(|_| ServeError::TickLoop)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.shutdown.send(true);
        let _ = self.commands.send(Inbound::Shutdown);
    }
}

fn tick_loop(
    mut session: Session,
    initial: InitialPose,
    mut inbox: mpsc::UnboundedReceiver<Inbound>,
    state: watch::Sender<Arc<StateFrame>>,
    period: Duration,
    options: ServeOptions,
) -> Recording {
    let (record, keep) = (options.record, options.keep_snapshots);
    let mut clients: Vec<(u64, mpsc::UnboundedSender<ServerMessage>)> = Vec::new();
    let mut script = Vec::new();
    let mut snapshots = Vec::new();
    if keep {
        snapshots.push(session.snapshot());
    }
    let broadcast = |clients: &mut Vec<(u64, mpsc::UnboundedSender<ServerMessage>)>, msg: ServerMessage| {
        clients.retain(|(_, tx)| tx.send(msg.clone()).is_ok());
    };
    let mut deadline = Instant::now();
    'run: loop {
        let tick = session.sim().state().tick;
        while let Ok(inbound) = inbox.try_recv() {
            match inbound {
                Inbound::Connect { id, tx } => clients.push((id, tx)),
                Inbound::Disconnect { id } => clients.retain(|(c, _)| *c != id),
                Inbound::Shutdown => break 'run,
                Inbound::Message { id, message } => match session.apply(&message.command) {
                    Ok(()) => {
                        if record && !matches!(message.command, Command::Subscribe { .. }) {
                            script.push(ScriptEntry { at_tick: Some(tick), message });
                        }
                    }
                    Err(CommandError { code, message }) => {
                        if let Some((_, tx)) = clients.iter().find(|(c, _)| *c == id) {
                            let _ = tx.send(ServerMessage::Error { code, message });
                        }
                    }
                },
            }
        }

        let events = match session.tick() {
            Ok(events) => events,
            Err(e) => {
                // Only the jog can fail here; it is stopped and the world
                // holds still for this tick.
                session.stop_jog();
                let code = CommandError::from(e).code;
                broadcast(&mut clients, ServerMessage::Error { code, message: "jog stopped: simulation step failed".into() });
                match session.tick() {
                    Ok(events) => events,
                    Err(e) => {
                        tracing::error!(error = %e, "world cannot advance");
                        Vec::new()
                    }
                }
            }
        };
        let now_tick = session.sim().state().tick;
        for event in events {
            broadcast(&mut clients, ServerMessage::Event { tick: now_tick, event });
        }
        state.send_replace(Arc::new(session.frame()));
        if keep {
            snapshots.push(session.snapshot());
        }

        deadline += period;
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        } else if now - deadline > period {
            // Far behind: drop the backlog rather than burst.
            deadline = now;
        }
    }

    let ticks = session.sim().state().tick;
    let scenario = Scenario {
        description: Some("recorded teleoperation session".into()),
        config: Some(ConfigSource::Inline(Box::new(session.config().clone()))),
        initial_pose: initial,
        objects: Vec::new(),
        script,
        ticks,
        until_idle: false,
        record: None,
    };
    Recording { scenario, snapshots }
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

fn text(msg: &ServerMessage) -> Message {
    Message::Text(msg.to_json().into())
}

fn state_interval(period: Duration) -> tokio::time::Interval {
    let mut iv = tokio::time::interval(period);
    iv.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    iv
}

async fn connection(socket: WebSocket, mut shared: Shared) {
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let (tx, mut outbox) = mpsc::unbounded_channel();
    if shared.commands.send(Inbound::Connect { id, tx }).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    if sink.send(text(&shared.hello)).await.is_err() {
        let _ = shared.commands.send(Inbound::Disconnect { id });
        return;
    }
    let mut state = shared.state.clone();
    state.mark_changed();
    let mut frames = state_interval(shared.tick_period);
    loop {
        tokio::select! {
            incoming = stream.next() => {
                let reply = match incoming {
                    None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                    Some(Ok(Message::Text(t))) => match serde_json::from_str::<ClientMessage>(t.as_str()) {
                        Ok(message) => {
                            if let Command::Subscribe { rate_hz } = message.command {
                                if rate_hz > 0.0 && rate_hz.is_finite() {
                                    frames = state_interval(Duration::from_secs_f64(1.0 / rate_hz).max(shared.tick_period));
                                }
                            }
                            if shared.commands.send(Inbound::Message { id, message }).is_err() {
                                break;
                            }
                            None
                        }
                        Err(e) => Some(ServerMessage::Error { code: ErrorCode::BadRequest, message: e.to_string() }),
                    },
                    Some(Ok(Message::Binary(_))) => Some(ServerMessage::Error {
                        code: ErrorCode::BadRequest,
                        message: "messages must be text frames holding JSON".into(),
                    }),
                    Some(Ok(_)) => None,
                };
                if let Some(reply) = reply {
                    if sink.send(text(&reply)).await.is_err() {
                        break;
                    }
                }
            }
            Some(out) = outbox.recv() => {
                if sink.send(text(&out)).await.is_err() {
                    break;
                }
            }
            _ = frames.tick() => {
                if state.has_changed().unwrap_or(false) {
                    let frame = state.borrow_and_update().clone();
                    if sink.send(text(&ServerMessage::State((*frame).clone()))).await.is_err() {
                        break;
                    }
                }
            }
            _ = async { shared.shutdown.wait_for(|s| *s).await.map(|_| ()) } => {
                // Deliver pending events before closing.
                while let Ok(out) = outbox.try_recv() {
                    let _ = sink.send(text(&out)).await;
                }
                let _ = sink.send(Message::Close(None)).await;
                break;
            }
        }
    }
    let _ = shared.commands.send(Inbound::Disconnect { id });
}
