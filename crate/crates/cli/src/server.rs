//! The live service.
//!
//! One thread owns the [`Session`] and paces it against the wall clock. Clients
//! talk to it only through an ordered command queue that the thread drains once
//! per tick. Telemetry is serialized once and fanned out through a broadcast
//! channel; a client that falls behind loses its oldest messages and never
//! holds up the simulation.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};

use contactplan::sim::Scenario;

use crate::protocol::{CommandFrame, ServerFrame, TelemetryMessage};
use crate::session::{Incoming, Session};

/// Messages buffered per client before the oldest are dropped.
pub const DEFAULT_CLIENT_BUFFER: usize = 1024;

/// If the loop falls this far behind the wall clock it stops trying to catch up.
const MAX_LAG: Duration = Duration::from_millis(250);

enum Inbound {
    Command(Incoming),
    Hello(oneshot::Sender<String>),
}

#[derive(Clone)]
struct AppState {
    inbound: mpsc::UnboundedSender<Inbound>,
    telemetry: broadcast::Sender<Arc<str>>,
    next_client: Arc<AtomicU64>,
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub client_buffer: usize,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            client_buffer: DEFAULT_CLIENT_BUFFER,
        }
    }
}

/// A running service; dropping it stops the simulation thread and the listener.
pub struct RunningService {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim_thread: Option<JoinHandle<()>>,
    shutdown: Option<oneshot::Sender<()>>,
    server: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl RunningService {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }

    /// Resolves when the listener stops, e.g. after [`RunningService::shutdown`].
    pub async fn wait(&mut self) -> std::io::Result<()> {
        match self.server.take() {
            Some(handle) => handle.await.unwrap_or_else(|e| Err(std::io::Error::other(e))),
            None => Ok(()),
        }
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.sim_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Bind `listener` and start serving `scenario`. Must be called inside a tokio runtime.
pub fn spawn(listener: TcpListener, scenario: Scenario, options: ServiceOptions) -> std::io::Result<RunningService> {
    let addr = listener.local_addr()?;
    let session = Session::new(scenario).map_err(std::io::Error::other)?;
    let (inbound_tx, inbound_rx) = mpsc::unbounded_channel();
    let (telemetry, _) = broadcast::channel(options.client_buffer.max(1));
    let stop = Arc::new(AtomicBool::new(false));

    let sim_thread = {
        let telemetry = telemetry.clone();
        let stop = stop.clone();
        std::thread::Builder::new()
            .name("simulation".into())
            .spawn(move || simulation_loop(session, inbound_rx, telemetry, stop))?
    };

    let state = AppState {
        inbound: inbound_tx,
        telemetry,
        next_client: Arc::new(AtomicU64::new(1)),
    };
    let app = Router::new()
        .route("/ws", get(upgrade))
        .route("/", get(upgrade))
        .with_state(state);
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            })
            .await
    });
    log::info!("serving on ws://{addr}/ws");
    Ok(RunningService {
        addr,
        stop,
        sim_thread: Some(sim_thread),
        shutdown: Some(shutdown_tx),
        server: Some(server),
    })
}

struct Publisher {
    telemetry: broadcast::Sender<Arc<str>>,
    seq: Option<u64>,
}

impl Publisher {
    fn publish(&mut self, message: TelemetryMessage) {
        let seq = self.seq.map_or(0, |s| s + 1);
        self.seq = Some(seq);
        let text: Arc<str> = ServerFrame::new(Some(seq), message).to_json().into();
        // no receivers is fine: nobody is watching yet
        let _ = self.telemetry.send(text);
    }
}

fn simulation_loop(
    mut session: Session,
    mut inbound: mpsc::UnboundedReceiver<Inbound>,
    telemetry: broadcast::Sender<Arc<str>>,
    stop: Arc<AtomicBool>,
) {
    let dt = Duration::from_secs_f64(session.scenario().dt());
    let mut publisher = Publisher { telemetry, seq: None };
    let mut deadline = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        loop {
            match inbound.try_recv() {
                Ok(Inbound::Command(incoming)) => {
                    log::debug!("command from client {}: {:?}", incoming.client, incoming.command);
                    for message in session.apply(incoming) {
                        publisher.publish(message);
                    }
                }
                Ok(Inbound::Hello(reply)) => {
                    let hello = ServerFrame::new(None, session.hello(publisher.seq));
                    let _ = reply.send(hello.to_json());
                }
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => return,
            }
        }
        match session.step() {
            Ok(messages) => messages.into_iter().for_each(|m| publisher.publish(m)),
            Err(e) => {
                log::error!("simulation step failed: {e}");
                publisher.publish(TelemetryMessage::Error {
                    message: format!("simulation stopped: {e}"),
                });
                return;
            }
        }
        deadline += dt;
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        } else if now - deadline > MAX_LAG {
            log::warn!("simulation fell {:?} behind real time", now - deadline);
            deadline = now;
        }
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let client = state.next_client.fetch_add(1, Ordering::Relaxed);
    // subscribe before asking for the hello so nothing after it is missed
    let mut telemetry = state.telemetry.subscribe();
    let (hello_tx, hello_rx) = oneshot::channel();
    if state.inbound.send(Inbound::Hello(hello_tx)).is_err() {
        return;
    }
    let Ok(hello) = hello_rx.await else {
        return;
    };
    let (mut sink, mut stream) = socket.split();
    if sink.send(Message::Text(hello.into())).await.is_err() {
        return;
    }
    log::info!("client {client} connected");
    loop {
        tokio::select! {
            message = telemetry.recv() => match message {
                Ok(text) => {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::warn!("client {client} is slow; dropped {n} oldest messages");
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            frame = stream.next() => match frame {
                Some(Ok(Message::Text(text))) => match CommandFrame::parse(text.as_str()) {
                    Ok(CommandFrame { id, command }) => {
                        let incoming = Incoming { client, id, command };
                        if state.inbound.send(Inbound::Command(incoming)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let reply = ServerFrame::new(None, TelemetryMessage::Error { message: e.to_string() });
                        if sink.send(Message::Text(reply.to_json().into())).await.is_err() {
                            break;
                        }
                    }
                },
                Some(Ok(Message::Binary(_))) => {
                    let reply = ServerFrame::new(None, TelemetryMessage::Error {
                        message: "binary frames are not supported; send JSON text".into(),
                    });
                    if sink.send(Message::Text(reply.to_json().into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    log::info!("client {client} disconnected");
}
