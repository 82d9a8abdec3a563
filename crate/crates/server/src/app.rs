//! HTTP/WebSocket front end over a single shared [`Session`].
//!
//! Mutations run one at a time under a mutex on the blocking pool (a commit
//! refits the preference model). Every successful mutation publishes the new
//! state message to all sockets and a fresh [`StimulusSnapshot`] to the
//! streaming loop; error replies go only to the client that caused them.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use grasshap_core::array::{build_array, focus_phases, AcousticConfig, TransducerArray};
use grasshap_core::session::{
    write_log_jsonl, Outbound, Session, SessionConfig, StateMessage, StimulusSnapshot, Streamer,
};
use grasshap_core::stm::FocusFrame;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

use crate::config::ServerConfig;

const FANOUT_CAPACITY: usize = 64;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    config: SessionConfig,
    session: Mutex<Session>,
    states: broadcast::Sender<String>,
    snapshot: watch::Sender<StimulusSnapshot>,
    stream: Mutex<StreamStatus>,
}

/// Counters published by the streaming loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamStatus {
    pub time_s: f64,
    pub blocks: u64,
    pub frames: u64,
    pub last_frame: Option<FocusFrame>,
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    pub seed: Option<u64>,
}

impl AppState {
    pub fn new(config: SessionConfig) -> anyhow::Result<Self> {
        let session = Session::new(config.clone())?;
        let (snapshot, _) = watch::channel(session.snapshot());
        let (states, _) = broadcast::channel(FANOUT_CAPACITY);
        Ok(Self {
            inner: Arc::new(Shared {
                config,
                session: Mutex::new(session),
                states,
                snapshot,
                stream: Mutex::new(StreamStatus::default()),
            }),
        })
    }

    fn session(&self) -> MutexGuard<'_, Session> {
        self.inner.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn state_message(&self) -> StateMessage {
        self.session().state_message()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<String> {
        self.inner.states.subscribe()
    }

    pub fn stream_status(&self) -> StreamStatus {
        self.inner.stream.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn publish(&self, session: &Session) -> String {
        let text = encode(&Outbound::State(Box::new(session.state_message())));
        self.inner.snapshot.send_replace(session.snapshot());
        // no receivers is fine
        let _ = self.inner.states.send(text.clone());
        text
    }

    /// Handles one wire message. State replies are broadcast; `Err` carries an
    /// error reply meant for the sender only.
    pub fn handle_text(&self, text: &str) -> Result<String, String> {
        let mut session = self.session();
        match session.handle_json(text) {
            out @ Outbound::Error { .. } => Err(encode(&out)),
            Outbound::State(_) => Ok(self.publish(&session)),
        }
    }

    /// Replaces the session with a fresh one. The old log is discarded.
    pub fn reset(&self, seed: Option<u64>) -> anyhow::Result<StateMessage> {
        let cfg = match seed {
            Some(s) => self.inner.config.clone().with_seed(s),
            None => self.inner.config.clone(),
        };
        let fresh = Session::new(cfg)?;
        let mut session = self.session();
        *session = fresh;
        self.publish(&session);
        Ok(session.state_message())
    }

    pub fn log_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_log_jsonl(self.session().log(), &mut out).expect("writing to memory");
        out
    }
}

fn encode(out: &Outbound) -> String {
    serde_json::to_string(out).expect("outbound messages serialize")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", get(get_session).post(post_session))
        .route("/session/log", get(get_log))
        .route("/stream", get(get_stream))
        .route("/ws", get(ws_upgrade))
        .with_state(state)
}

async fn get_session(State(app): State<AppState>) -> Json<StateMessage> {
    Json(app.state_message())
}

async fn post_session(State(app): State<AppState>, body: Option<Json<CreateSession>>) -> Response {
    let seed = body.and_then(|Json(b)| b.seed);
    match tokio::task::spawn_blocking(move || app.reset(seed)).await {
        Ok(Ok(msg)) => (StatusCode::CREATED, Json(msg)).into_response(),
        Ok(Err(e)) => (StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn get_log(State(app): State<AppState>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], app.log_jsonl())
}

async fn get_stream(State(app): State<AppState>) -> Json<StreamStatus> {
    Json(app.stream_status())
}

async fn ws_upgrade(State(app): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| client(app, socket))
}

async fn client(app: AppState, socket: WebSocket) {
    let (mut tx, mut rx) = socket.split();
    let mut states = app.subscribe();
    let hello = encode(&Outbound::State(Box::new(app.state_message())));
    if tx.send(Message::Text(hello.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            inbound = rx.next() => {
                let text = match inbound {
                    Some(Ok(Message::Text(t))) => t.to_string(),
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let app = app.clone();
                let reply = tokio::task::spawn_blocking(move || app.handle_text(&text)).await;
                // state replies arrive through the broadcast
                if let Ok(Err(error)) = reply {
                    if tx.send(Message::Text(error.into())).await.is_err() {
                        break;
                    }
                }
            }
            fanout = states.recv() => match fanout {
                Ok(text) => {
                    if tx.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "slow client dropped state messages");
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
}

/// Block-rate loop standing in for the array driver: renders one waveform
/// block per period from the latest snapshot and solves focusing phases for
/// each STM frame that falls inside it.
pub async fn run_stream(
    app: AppState,
    array: TransducerArray,
    acoustic: AcousticConfig,
) -> anyhow::Result<()> {
    let cfg = &app.inner.config;
    let mut streamer = Streamer::new(cfg.stm.clone(), cfg.render)?;
    let period = Duration::from_secs_f64(cfg.render.block_duration());
    let mut snapshots = app.inner.snapshot.subscribe();
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        interval.tick().await;
        let snap = *snapshots.borrow_and_update();
        let out = streamer.tick(&snap)?;
        for f in &out.frames {
            focus_phases(&array, &acoustic, &f.position)?;
        }
        let mut status = app.inner.stream.lock().unwrap_or_else(|e| e.into_inner());
        status.time_s = streamer.time();
        status.blocks += 1;
        status.frames += out.frames.len() as u64;
        if let Some(last) = out.frames.last() {
            status.last_frame = Some(*last);
        }
    }
}

/// Binds and serves until ctrl-c.
pub async fn serve(config: ServerConfig) -> anyhow::Result<()> {
    let app = AppState::new(config.session.clone())?;
    if config.stream {
        let array = build_array(&config.array_config()?)?;
        let stream_app = app.clone();
        let acoustic = config.acoustic;
        tokio::spawn(async move {
            if let Err(e) = run_stream(stream_app, array, acoustic).await {
                tracing::error!("streaming loop stopped: {e:#}");
            }
        });
    }
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
