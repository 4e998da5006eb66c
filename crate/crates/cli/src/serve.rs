use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::Result;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use clap::Args;
use futures::{SinkExt, StreamExt};
use fullstream_core::service::{Effect, Hub, ProtocolState, SessionPermit, TelemetryMapper, TelemetryQueue};
use fullstream_core::{BackendKind, ClockMode, Session};
use tokio::sync::Notify;

/// Outbound messages buffered per connection before sps/histogram/metrics
/// start being dropped.
const QUEUE_CAPACITY: usize = 256;

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, default_value_t = 8)]
    max_sessions: usize,
    #[arg(long, default_value = "toy")]
    backend: BackendKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone)]
struct AppState {
    hub: Arc<Hub>,
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new().route("/health", get(health)).route("/ws", get(ws)).with_state(AppState { hub })
}

pub fn run(args: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let hub = Arc::new(Hub::new(args.max_sessions, args.seed, args.backend, ClockMode::Wall));
    let addr = SocketAddr::new(args.host, args.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, router(hub)).await?;
        Ok(())
    })
}

async fn health(State(state): State<AppState>) -> impl IntoResponse {
    Json(serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "active_sessions": state.hub.active_sessions(),
        "max_sessions": state.hub.max_sessions(),
    }))
}

async fn ws(upgrade: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    upgrade.on_upgrade(move |socket| connection(socket, state.hub))
}

struct Outbox {
    queue: Mutex<TelemetryQueue>,
    notify: Notify,
    closed: AtomicBool,
}

impl Outbox {
    fn push(&self, msg: fullstream_core::service::Telemetry) {
        self.queue.lock().expect("queue lock").push(msg);
        self.notify.notify_one();
    }
}

/// Engine thread: drives the session on the wall clock and maps its events.
fn spawn_engine(mut session: Box<Session>, permit: SessionPermit, outbox: Arc<Outbox>) {
    std::thread::spawn(move || {
        let id = permit.id();
        let mut mapper = TelemetryMapper::new();
        let result = session.run(&mut |event| {
            if let Some(t) = mapper.map(&event) {
                outbox.push(t);
            }
        });
        if let Err(e) = result {
            tracing::debug!(session = id, error = %e, "engine stopped");
        }
        drop(permit);
    });
}

async fn connection(socket: WebSocket, hub: Arc<Hub>) {
    let (mut tx, mut rx) = socket.split();
    let outbox = Arc::new(Outbox {
        queue: Mutex::new(TelemetryQueue::new(QUEUE_CAPACITY)),
        notify: Notify::new(),
        closed: AtomicBool::new(false),
    });

    let writer_box = Arc::clone(&outbox);
    let writer = tokio::spawn(async move {
        loop {
            let batch: Vec<_> = writer_box.queue.lock().expect("queue lock").drain().collect();
            for msg in batch {
                if tx.send(Message::Text(msg.to_json().into())).await.is_err() {
                    return;
                }
            }
            if writer_box.closed.load(Ordering::SeqCst) {
                let _ = tx.close().await;
                return;
            }
            writer_box.notify.notified().await;
        }
    });

    let mut state = ProtocolState::new();
    while let Some(Ok(msg)) = rx.next().await {
        let raw: Vec<u8> = match msg {
            Message::Text(t) => t.as_bytes().to_vec(),
            Message::Binary(b) => b.to_vec(),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        for effect in state.handle(&raw, &hub) {
            match effect {
                Effect::Reply(t) => outbox.push(t),
                Effect::Start { session, permit } => {
                    tracing::info!(session = permit.id(), "session started");
                    spawn_engine(session, permit, Arc::clone(&outbox));
                }
            }
        }
    }
    state.disconnect();
    outbox.closed.store(true, Ordering::SeqCst);
    outbox.notify.notify_one();
    let _ = writer.await;
}
