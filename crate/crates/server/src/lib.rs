//! HTTP front end for the session gateway.
//!
//! Routes:
//!
//! | method | path                    | body         | reply                          |
//! |--------|-------------------------|--------------|--------------------------------|
//! | POST   | `/session`              | SessionStart | 201, SessionStart ack          |
//! | POST   | `/session/{id}/turn`    | UserTurn     | 200, array of RobotTurn        |
//! | GET    | `/session/{id}/events`  |              | event stream of pushed turns   |
//! | DELETE | `/session/{id}`         |              | 200, SessionEnd                |
//! | POST   | `/session/{id}/fault`   | fault        | 204 (test hook)                |
//!
//! Bodies may be full wire envelopes or bare message bodies. Every reply is
//! canonical JSON; failures are wire `Error` messages.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::Stream;
use serde_json::Value;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::broadcast;

use convoforge_core::sim::Fault;
use convoforge_core::wire::{self, Body, SessionStart, UserTurn, WireError};
use convoforge_core::{GatewayContext, GatewayError, Mode, Session, WireMessage};

pub const DEFAULT_PORT: u16 = 8732;
pub const PORT_ENV: &str = "CONVOFORGE_PORT";

const EVENT_BUFFER: usize = 64;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] GatewayError),
    #[error("invalid {PORT_ENV} value `{0}`")]
    Port(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads the port from `CONVOFORGE_PORT`, falling back to 8732.
pub fn port_from_env() -> Result<u16, ServerError> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| ServerError::Port(v)),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

fn read(path: &Path) -> Result<String, ServerError> {
    std::fs::read_to_string(path).map_err(|source| ServerError::Read {
        path: path.to_owned(),
        source,
    })
}

/// Loads and validates the schema and task files; missing paths use the shipped defaults.
pub fn load_context(schema: Option<&Path>, task: Option<&Path>) -> Result<GatewayContext, ServerError> {
    let schema = match schema {
        Some(p) => read(p)?,
        None => convoforge_core::DEFAULT_SCHEMA.to_owned(),
    };
    let task = match task {
        Some(p) => read(p)?,
        None => convoforge_core::DEFAULT_TASK.to_owned(),
    };
    Ok(GatewayContext::from_documents(&schema, &task)?)
}

struct Slot {
    session: tokio::sync::Mutex<Session>,
    events: broadcast::Sender<WireMessage>,
}

impl Slot {
    fn publish(&self, session: &mut Session) {
        for msg in session.take_pushed() {
            // no subscribers is fine: pushed turns stay in the wire log
            let _ = self.events.send(msg);
        }
    }
}

pub struct AppState {
    ctx: Arc<GatewayContext>,
    sessions: Mutex<HashMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(ctx: Arc<GatewayContext>) -> Self {
        AppState {
            ctx,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(0),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, GatewayError> {
        self.sessions
            .lock()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::NoSession(id.to_owned()))
    }

    fn fresh_id(&self, taken: &HashMap<String, Arc<Slot>>) -> String {
        loop {
            let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1);
            if !taken.contains_key(&id) {
                return id;
            }
        }
    }
}

pub fn router(ctx: Arc<GatewayContext>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", axum::routing::delete(end_session))
        .route("/session/{id}/turn", post(turn))
        .route("/session/{id}/events", get(events))
        .route("/session/{id}/fault", post(fault))
        .with_state(Arc::new(AppState::new(ctx)))
}

/// Serves on an already bound listener until the future is dropped.
pub async fn serve(listener: TcpListener, ctx: Arc<GatewayContext>) -> Result<(), ServerError> {
    tracing::info!(addr = ?listener.local_addr()?, schema = %ctx.schema.name, "gateway listening");
    axum::serve(listener, router(ctx)).await?;
    Ok(())
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { addr, source })
}

struct ApiError {
    session: String,
    error: GatewayError,
}

impl ApiError {
    fn new(session: &str, error: impl Into<GatewayError>) -> Self {
        ApiError {
            session: session.to_owned(),
            error: error.into(),
        }
    }
}

fn status_of(e: &GatewayError) -> StatusCode {
    match e {
        GatewayError::NoSession(_) => StatusCode::NOT_FOUND,
        GatewayError::EmptySessionId | GatewayError::BadRequest(_) | GatewayError::Wire(_) => StatusCode::BAD_REQUEST,
        GatewayError::DuplicateSession(_) | GatewayError::Ended(_) | GatewayError::Engine(_) => StatusCode::CONFLICT,
        GatewayError::Sim(_) => StatusCode::UNPROCESSABLE_ENTITY,
        GatewayError::Schema(_) | GatewayError::Task(_) | GatewayError::Handler(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn json(status: StatusCode, body: Vec<u8>) -> Response {
    (
        status,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        body,
    )
        .into_response()
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(&self.error);
        tracing::debug!(session = %self.session, code = self.error.code(), "{}", self.error);
        json(status, wire::encode(&self.error.to_wire(&self.session, 0)))
    }
}

fn encode_array(msgs: &[WireMessage]) -> Vec<u8> {
    let mut out = b"[".to_vec();
    for (i, m) in msgs.iter().enumerate() {
        if i > 0 {
            out.push(b',');
        }
        out.extend(wire::encode(m));
    }
    out.push(b']');
    out
}

fn parse_value(session: &str, bytes: &[u8]) -> Result<Value, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(session, WireError::Malformed(e.to_string())))
}

fn is_envelope(v: &Value) -> bool {
    v.get("kind").is_some() && v.get("version").is_some()
}

fn bare<T: serde::de::DeserializeOwned>(session: &str, kind: &str, v: Value) -> Result<T, ApiError> {
    serde_json::from_value(v).map_err(|e| {
        ApiError::new(
            session,
            WireError::InvalidBody {
                kind: kind.to_owned(),
                message: e.to_string(),
            },
        )
    })
}

async fn create_session(State(state): State<Arc<AppState>>, bytes: Bytes) -> Result<Response, ApiError> {
    let v = parse_value("", &bytes)?;
    let (requested, start) = if is_envelope(&v) {
        let msg = wire::decode(&bytes).map_err(|e| ApiError::new("", e))?;
        match msg.body {
            Body::SessionStart(s) => (Some(msg.session).filter(|s| !s.is_empty()), s),
            other => {
                return Err(ApiError::new(
                    &msg.session,
                    GatewayError::BadRequest(format!("expected SessionStart, got {}", other.kind())),
                ))
            }
        }
    } else {
        (None, bare::<SessionStart>("", "SessionStart", v)?)
    };
    let id_hint = requested.clone().unwrap_or_default();
    if start.schema_name != state.ctx.schema.name {
        return Err(ApiError::new(
            &id_hint,
            GatewayError::BadRequest(format!(
                "server runs schema `{}`, not `{}`",
                state.ctx.schema.name, start.schema_name
            )),
        ));
    }
    let mode: Mode = start.mode.parse().map_err(|e| ApiError::new(&id_hint, e))?;

    let mut sessions = state.sessions.lock().expect("registry lock");
    let id = match requested {
        Some(id) if sessions.contains_key(&id) => {
            return Err(ApiError::new(&id, GatewayError::DuplicateSession(id.clone())))
        }
        Some(id) => id,
        None => state.fresh_id(&sessions),
    };
    let mut session = Session::new(state.ctx.clone(), &id, mode).map_err(|e| ApiError::new(&id, e))?;
    let ack = session.start_message();
    let (events, _) = broadcast::channel(EVENT_BUFFER);
    sessions.insert(
        id.clone(),
        Arc::new(Slot {
            session: tokio::sync::Mutex::new(session),
            events,
        }),
    );
    drop(sessions);
    tracing::info!(session = %id, %mode, "session opened");

    let mut resp = json(StatusCode::CREATED, wire::encode(&ack));
    if let Ok(loc) = HeaderValue::from_str(&format!("/session/{id}")) {
        resp.headers_mut().insert(header::LOCATION, loc);
    }
    Ok(resp)
}

async fn turn(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    bytes: Bytes,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id).map_err(|e| ApiError::new(&id, e))?;
    let v = parse_value(&id, &bytes)?;
    let mut session = slot.session.lock().await;
    let out = if is_envelope(&v) {
        let msg = wire::decode(&bytes).map_err(|e| ApiError::new(&id, e))?;
        if msg.session != id {
            return Err(ApiError::new(
                &id,
                GatewayError::BadRequest(format!("envelope addressed to `{}`", msg.session)),
            ));
        }
        session.receive(msg)
    } else {
        let UserTurn { text } = bare(&id, "UserTurn", v)?;
        session.user_turn(&text)
    }
    .map_err(|e| ApiError::new(&id, e))?;
    slot.publish(&mut session);
    Ok(json(StatusCode::OK, encode_array(&out)))
}

async fn fault(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    bytes: Bytes,
) -> Result<StatusCode, ApiError> {
    let slot = state.slot(&id).map_err(|e| ApiError::new(&id, e))?;
    let f: Fault = bare(&id, "Fault", parse_value(&id, &bytes)?)?;
    let mut session = slot.session.lock().await;
    session.inject_fault(f).map_err(|e| ApiError::new(&id, e))?;
    slot.publish(&mut session);
    Ok(StatusCode::NO_CONTENT)
}

async fn end_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let slot = state
        .sessions
        .lock()
        .expect("registry lock")
        .remove(&id)
        .ok_or_else(|| ApiError::new(&id, GatewayError::NoSession(id.clone())))?;
    let mut session = slot.session.lock().await;
    let end = session.close("closed by client");
    let _ = slot.events.send(end.clone());
    tracing::info!(session = %id, total = %session.now(), turns = session.turns(), "session closed");
    Ok(json(StatusCode::OK, wire::encode(&end)))
}

async fn events(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, std::convert::Infallible>>>, ApiError> {
    let slot = state.slot(&id).map_err(|e| ApiError::new(&id, e))?;
    let rx = slot.events.subscribe();
    drop(slot);
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(msg) => {
                    let ev = SseEvent::default()
                        .event(msg.kind())
                        .id(msg.seq.to_string())
                        .data(String::from_utf8(wire::encode(&msg)).expect("canonical JSON is UTF-8"));
                    return Some((Ok(ev), rx));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event subscriber lagging");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
