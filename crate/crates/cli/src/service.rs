//! HTTP and WebSocket routes.
//!
//! | route | |
//! |---|---|
//! | `GET /health` | `{"status":"ok"}` |
//! | `POST /sessions` | starts a session, returns `{"session_id"}` |
//! | `GET /sessions/{id}/transcript` | JSON Lines, header first |
//! | `GET /sessions/{id}/events?from_seq=N` | WebSocket event stream |

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use metactl_core::dispatch::AssetCatalog;
use metactl_core::event::{EventKind, SessionEvent};
use metactl_core::interpret::ParseMode;
use metactl_core::llm::{
    Gateway, GatewayPort, HttpBackend, HttpBackendConfig, LlmPort, ScriptEntry, ScriptedBackend,
    ScriptedPort,
};
use metactl_core::scenario::Scenario;
use metactl_core::session::{Engine, EngineSettings, Input};
use metactl_core::transcript::{TranscriptHeader, TranscriptWriter};

use crate::session::SessionHandle;

#[derive(Debug, Clone)]
pub enum LlmChoice {
    /// Every session gets its own copy of the script.
    Scripted(Vec<ScriptEntry>),
    Http(HttpBackendConfig),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub scenario: Scenario,
    pub catalog: AssetCatalog,
    pub settings: EngineSettings,
    pub llm: LlmChoice,
    pub transcript_dir: PathBuf,
    /// Real time per engine tick. Defaults to the engine tick.
    pub wall_tick: Option<Duration>,
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<RwLock<HashMap<String, Arc<SessionHandle>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::default(),
        }
    }

    fn session(&self, id: &str) -> Option<Arc<SessionHandle>> {
        self.sessions.read().unwrap().get(id).cloned()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

/// Optional per-session overrides.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    budget_seconds: Option<u64>,
    parse_mode: Option<ParseMode>,
}

fn error(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

async fn create_session(
    State(state): State<AppState>,
    body: Option<Json<CreateSession>>,
) -> Response {
    let overrides = body.map(|Json(b)| b).unwrap_or_default();
    let cfg = &state.config;
    let mut settings = cfg.settings.clone();
    if let Some(s) = overrides.budget_seconds {
        if s == 0 {
            return error(
                StatusCode::UNPROCESSABLE_ENTITY,
                "budget_seconds must be positive",
            );
        }
        settings.budget_ms = Some(s * 1_000);
    }
    if let Some(mode) = overrides.parse_mode {
        settings.parse_mode = mode;
    }

    let port: Box<dyn LlmPort> = match &cfg.llm {
        LlmChoice::Scripted(entries) => Box::new(ScriptedPort::new(ScriptedBackend::from_entries(
            entries.clone(),
        ))),
        LlmChoice::Http(http) => {
            let backend = HttpBackend::from_env(http.clone());
            Box::new(GatewayPort::new(Arc::new(Gateway::new(Arc::new(backend)))))
        }
    };
    let wall_tick = cfg
        .wall_tick
        .unwrap_or(Duration::from_millis(settings.tick_ms));
    let engine = Engine::new(cfg.scenario.clone(), cfg.catalog.clone(), settings, port);

    let id = uuid::Uuid::new_v4().to_string();
    let header = TranscriptHeader::new(cfg.scenario.id.clone(), engine.config_hash());
    let path = cfg.transcript_dir.join(format!("{id}.jsonl"));
    let writer = match TranscriptWriter::create(&path, &header) {
        Ok(w) => w,
        Err(e) => {
            tracing::error!(path = %path.display(), "{e}");
            return error(StatusCode::SERVICE_UNAVAILABLE, e);
        }
    };
    let engine = engine.with_sink(Box::new(writer));

    let handle = SessionHandle::spawn(engine, header, wall_tick);
    state.sessions.write().unwrap().insert(id.clone(), handle);
    tracing::info!(session_id = %id, transcript = %path.display(), "session created");
    (StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response()
}

async fn transcript(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.session(&id) {
        Some(s) => (
            [(header::CONTENT_TYPE, "application/x-ndjson")],
            s.transcript(),
        )
            .into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no session {id}")),
    }
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from_seq: u64,
}

async fn events(
    ws: WebSocketUpgrade,
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Response {
    match state.session(&id) {
        Some(s) => ws.on_upgrade(move |socket| stream(socket, s, q.from_seq)),
        None => error(StatusCode::NOT_FOUND, format!("no session {id}")),
    }
}

fn frame(e: &SessionEvent) -> Message {
    Message::Text(serde_json::to_string(e).expect("events serialize").into())
}

/// Forward events in seq order and feed client messages to the engine. The
/// socket closes after SessionEnded has been sent.
async fn stream(socket: WebSocket, session: Arc<SessionHandle>, from_seq: u64) {
    let (mut tx, mut rx) = socket.split();
    let (backlog, mut live) = session.subscribe(from_seq);
    let mut next = from_seq;

    let mut pending = backlog;
    loop {
        for e in pending.drain(..) {
            if e.seq < next {
                continue;
            }
            next = e.seq + 1;
            let ended = matches!(e.kind, EventKind::SessionEnded(_));
            if tx.send(frame(&e)).await.is_err() {
                return;
            }
            if ended {
                let _ = tx.send(Message::Close(None)).await;
                return;
            }
        }
        tokio::select! {
            ev = live.recv() => match ev {
                Ok(e) => pending.push(e),
                Err(RecvError::Lagged(_)) => pending = session.events_from(next),
                Err(RecvError::Closed) => return,
            },
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<Input>(&text) {
                    Ok(input) => {
                        session.send(input);
                    }
                    Err(e) => tracing::warn!("ignoring client message {text:?}: {e}"),
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
