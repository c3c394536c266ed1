//! Hosts one interactive session over a web socket at `/session`.
//!
//! A single owner task holds the [`SessionCore`] and runs the tick loop.
//! Connection handlers talk to it through a command queue and read published
//! state through a watch channel, so a slow viewer only ever misses frames.
//! The first connection drives; later ones spectate. Without a driver the
//! simulation does not advance.

use std::io::{self, Write};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use blindwalk_core::session::{
    parse_client_frame, Ack, AckStatus, ClientFrame, ClientInput, Role, ServerFrame, SessionCore,
};
use blindwalk_core::simulator::{RunConfig, RunMetrics, SimError};
use blindwalk_core::VirtualLayout;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;
use tracing::{debug, info, warn};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Session(#[from] SimError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("session I/O: {0}")]
    Io(#[from] io::Error),
    #[error("session task failed: {0}")]
    Task(String),
}

/// State frames as published after a tick, one per role.
#[derive(Debug)]
struct Published {
    tick: u64,
    driver: String,
    spectator: String,
}

impl Published {
    fn render(core: &SessionCore) -> Arc<Published> {
        let snapshot = core.snapshot();
        let frame = |seq| {
            ServerFrame::State {
                snapshot: snapshot.clone(),
                last_applied_seq: seq,
            }
            .to_json()
        };
        Arc::new(Published {
            tick: snapshot.tick,
            driver: frame(core.last_applied_seq()),
            spectator: frame(None),
        })
    }

    fn for_role(&self, role: Role) -> &str {
        match role {
            Role::Driver => &self.driver,
            Role::Spectator => &self.spectator,
        }
    }
}

struct Joined {
    conn: u64,
    role: Role,
    hello: String,
}

enum Command {
    Join(oneshot::Sender<Joined>),
    Input {
        conn: u64,
        input: ClientInput,
        reply: oneshot::Sender<Ack>,
    },
    Leave(u64),
}

#[derive(Clone)]
struct Shared {
    commands: mpsc::Sender<Command>,
    published: watch::Receiver<Arc<Published>>,
}

/// A running session: the owner task plus the HTTP listener.
pub struct SessionServer {
    local_addr: SocketAddr,
    published: watch::Receiver<Arc<Published>>,
    stop: Option<oneshot::Sender<()>>,
    owner: JoinHandle<io::Result<RunMetrics>>,
    http: JoinHandle<io::Result<()>>,
}

/// Builds the session (refusing invalid configs and layouts) and starts
/// listening on `addr`. The simulation stays at tick 0 until a driver joins.
pub async fn start_session(
    layout: &VirtualLayout,
    cfg: &RunConfig,
    addr: SocketAddr,
    trace: Box<dyn Write + Send>,
    input_log: Box<dyn Write + Send>,
) -> Result<SessionServer, ServerError> {
    let core = SessionCore::new(layout, cfg, trace, input_log)?;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { addr, source })?;
    let local_addr = listener.local_addr()?;
    let (commands, command_rx) = mpsc::channel(256);
    let (publish, published) = watch::channel(Published::render(&core));
    let (stop, stop_rx) = oneshot::channel();
    let tick = Duration::from_secs_f64(cfg.kinematics.dt);
    let owner = tokio::spawn(run_owner(core, command_rx, publish, tick, stop_rx));

    let shared = Shared {
        commands,
        published: published.clone(),
    };
    let app = Router::new().route("/session", get(upgrade)).with_state(shared);
    let mut closed = published.clone();
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                // The owner dropping its sender ends the session.
                while closed.changed().await.is_ok() {}
            })
            .await
    });
    info!(%local_addr, "session listening on ws://{local_addr}/session");
    Ok(SessionServer {
        local_addr,
        published,
        stop: Some(stop),
        owner,
        http,
    })
}

impl SessionServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Last published tick.
    pub fn tick(&self) -> u64 {
        self.published.borrow().tick
    }

    /// Stops the tick loop, flushes trace and input log, and closes all
    /// connections. Returns the metrics of the session so far.
    pub async fn shutdown(mut self) -> Result<RunMetrics, ServerError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let metrics = self.owner.await.map_err(|e| ServerError::Task(e.to_string()))??;
        match tokio::time::timeout(Duration::from_secs(2), &mut self.http).await {
            Ok(joined) => joined.map_err(|e| ServerError::Task(e.to_string()))??,
            Err(_) => self.http.abort(),
        }
        Ok(metrics)
    }
}

async fn run_owner(
    mut core: SessionCore,
    mut commands: mpsc::Receiver<Command>,
    publish: watch::Sender<Arc<Published>>,
    tick: Duration,
    mut stop: oneshot::Receiver<()>,
) -> io::Result<RunMetrics> {
    let mut interval = tokio::time::interval(tick);
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut driver: Option<u64> = None;
    let mut next_conn = 0u64;
    loop {
        tokio::select! {
            biased;
            _ = &mut stop => break,
            cmd = commands.recv() => match cmd {
                None => break,
                Some(Command::Join(reply)) => {
                    let conn = next_conn;
                    next_conn += 1;
                    let role = if driver.is_none() {
                        driver = Some(conn);
                        interval.reset();
                        Role::Driver
                    } else {
                        Role::Spectator
                    };
                    info!(conn, ?role, "viewer joined");
                    let hello = core.hello(role).to_json();
                    let _ = reply.send(Joined { conn, role, hello });
                }
                Some(Command::Input { conn, input, reply }) => {
                    let ack = if driver == Some(conn) {
                        core.handle_input(input)
                    } else {
                        Ack {
                            seq: input.seq,
                            status: AckStatus::Rejected,
                            reason: Some("only the driver steers".into()),
                        }
                    };
                    let _ = reply.send(ack);
                }
                Some(Command::Leave(conn)) => {
                    if driver == Some(conn) {
                        driver = None;
                        info!(conn, tick = core.tick_count(), "driver left; session paused");
                    } else {
                        debug!(conn, "spectator left");
                    }
                }
            },
            _ = interval.tick(), if driver.is_some() => {
                core.tick()?;
                publish.send_replace(Published::render(&core));
            }
        }
    }
    core.flush()?;
    info!(tick = core.tick_count(), "session stopped");
    Ok(core.metrics())
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> Response {
    ws.on_upgrade(move |socket| handle_socket(socket, shared))
}

async fn send_text(socket: &mut WebSocket, text: &str) -> bool {
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn handle_socket(mut socket: WebSocket, shared: Shared) {
    let (reply, joined) = oneshot::channel();
    if shared.commands.send(Command::Join(reply)).await.is_err() {
        return;
    }
    let Ok(Joined { conn, role, hello }) = joined.await else {
        return;
    };
    let mut published = shared.published.clone();
    // Send the current state right after the greeting.
    published.mark_changed();
    if send_text(&mut socket, &hello).await {
        serve_connection(&mut socket, &shared, conn, role, &mut published).await;
    }
    let _ = shared.commands.send(Command::Leave(conn)).await;
}

async fn serve_connection(
    socket: &mut WebSocket,
    shared: &Shared,
    conn: u64,
    role: Role,
    published: &mut watch::Receiver<Arc<Published>>,
) {
    loop {
        tokio::select! {
            changed = published.changed() => {
                if changed.is_err() {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
                let frames = published.borrow_and_update().clone();
                if !send_text(socket, frames.for_role(role)).await {
                    return;
                }
            }
            incoming = socket.recv() => {
                let reply = match incoming {
                    Some(Ok(Message::Text(text))) => handle_text(shared, conn, role, text.as_str()).await,
                    Some(Ok(Message::Binary(_))) => Some(error_frame("binary frames are not supported")),
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => return,
                    Some(Ok(_)) => None,
                };
                if let Some(text) = reply {
                    if !send_text(socket, &text).await {
                        return;
                    }
                }
            }
        }
    }
}

fn error_frame(message: &str) -> String {
    ServerFrame::Error {
        message: message.to_string(),
    }
    .to_json()
}

async fn handle_text(shared: &Shared, conn: u64, role: Role, text: &str) -> Option<String> {
    let ClientFrame::Input(input) = match parse_client_frame(text) {
        Ok(frame) => frame,
        Err(message) => {
            warn!(conn, %message, "rejected frame");
            return Some(error_frame(&message));
        }
    };
    if role == Role::Spectator {
        return Some(error_frame("spectators cannot steer"));
    }
    let (reply, ack) = oneshot::channel();
    shared.commands.send(Command::Input { conn, input, reply }).await.ok()?;
    let ack = ack.await.ok()?;
    Some(ServerFrame::Ack(ack).to_json())
}
