//! HTTP + SSE service, one engine session per channel.
//!
//! Routes (all under `/v1`):
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/health` | liveness |
//! | GET | `/channels` | channel ids |
//! | PUT | `/channels/{id}` | create or reset a channel |
//! | POST | `/channels/{id}/messages` | run one turn |
//! | GET | `/channels/{id}/state` | backlog, workflow, roster, memory, history |
//! | GET | `/channels/{id}/history?n=` | last `n` messages |
//! | GET | `/channels/{id}/events` | trace stream (SSE) |
//!
//! A channel runs one turn at a time. A POST that arrives while a turn is
//! in flight gets 409 instead of queueing.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use ambient_core::{
    format_wire_time, Engine, EngineConfig, IntentMultiset, ProjectState, Task, TeamMember, TurnTrace, WireMessage,
};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, Mutex};
use tracing::{info, warn};

const EVENT_BUFFER: usize = 256;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn unknown_channel(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown channel `{id}`"))
    }

    fn busy(id: &str) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            format!("a turn is already in flight on channel `{id}`"),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

/// One record on a channel's event stream, sent once per completed turn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnEvent {
    pub channel: String,
    pub message: WireMessage,
    pub responses: Vec<String>,
    pub emitted: IntentMultiset,
    pub trace: TurnTrace,
}

pub struct ServiceSession {
    pub id: String,
    state: Arc<Mutex<ProjectState>>,
    engine: Arc<Engine>,
    events: broadcast::Sender<TurnEvent>,
}

impl ServiceSession {
    fn new(id: &str, config: &EngineConfig, team: Vec<TeamMember>, backlog: Vec<Task>) -> Result<Self, ApiError> {
        let state = ProjectState::new(team, backlog.clone()).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let config = EngineConfig {
            channel: id.to_string(),
            ..config.clone()
        };
        Ok(Self {
            id: id.to_string(),
            state: Arc::new(Mutex::new(state)),
            engine: Arc::new(Engine::in_memory(config, backlog)),
            events: broadcast::channel(EVENT_BUFFER).0,
        })
    }
}

/// Shared service state: engine settings, the seed used for new channels,
/// and the live sessions.
pub struct AppState {
    config: EngineConfig,
    team: Vec<TeamMember>,
    backlog: Vec<Task>,
    token: Option<String>,
    sessions: RwLock<BTreeMap<String, Arc<ServiceSession>>>,
}

impl AppState {
    pub fn new(config: EngineConfig, team: Vec<TeamMember>, backlog: Vec<Task>) -> Self {
        Self {
            config,
            team,
            backlog,
            token: None,
            sessions: RwLock::new(BTreeMap::new()),
        }
    }

    /// Requires `Authorization: Bearer <token>` on every route but health.
    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    /// Creates `id` from the service seed. Replaces nothing if it exists.
    pub fn open_channel(&self, id: &str) -> Result<(), ApiError> {
        let mut sessions = self.sessions.write().unwrap();
        if !sessions.contains_key(id) {
            let session = ServiceSession::new(id, &self.config, self.team.clone(), self.backlog.clone())?;
            sessions.insert(id.to_string(), Arc::new(session));
        }
        Ok(())
    }

    fn session(&self, id: &str) -> Result<Arc<ServiceSession>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_channel(id))
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    let channels = Router::new()
        .route("/channels", get(list_channels))
        .route("/channels/{id}", put(put_channel))
        .route("/channels/{id}/messages", post(post_message))
        .route("/channels/{id}/state", get(get_state))
        .route("/channels/{id}/history", get(get_history))
        .route("/channels/{id}/events", get(get_events))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token));
    Router::new()
        .nest("/v1", channels.route("/health", get(|| async { "ok" })))
        .with_state(app)
}

pub async fn serve(listener: tokio::net::TcpListener, app: Arc<AppState>) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    info!(%addr, "listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn require_token(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = &app.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return Err(ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token"));
        }
    }
    Ok(next.run(req).await)
}

async fn list_channels(State(app): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(app.sessions.read().unwrap().keys().cloned().collect())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSeed {
    team: Option<Vec<TeamMember>>,
    #[serde(alias = "initial_backlog")]
    backlog: Option<Vec<Task>>,
}

/// Creates the channel, or resets it to the given seed. Fields left out
/// of the body fall back to the service seed.
async fn put_channel(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Option<Json<ChannelSeed>>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    if id.trim().is_empty() {
        return Err(ApiError::bad_request("empty channel id"));
    }
    let seed = body.map(|Json(s)| s).unwrap_or_default();
    let team = seed.team.unwrap_or_else(|| app.team.clone());
    let backlog = seed.backlog.unwrap_or_else(|| app.backlog.clone());
    let session = Arc::new(ServiceSession::new(&id, &app.config, team, backlog)?);
    let previous = app.sessions.read().unwrap().get(&id).cloned();
    // resetting under a running turn would drop that turn's effects
    let _guard = match &previous {
        Some(p) => Some(p.state.clone().try_lock_owned().map_err(|_| ApiError::busy(&id))?),
        None => None,
    };
    app.sessions.write().unwrap().insert(id.clone(), session);
    let status = if previous.is_some() {
        StatusCode::OK
    } else {
        StatusCode::CREATED
    };
    Ok((status, Json(json!({"channel": id}))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PostMessage {
    user: String,
    text: String,
    /// `DD-MM-YYYY HH:MM:SS`; defaults to now.
    time: Option<String>,
}

#[derive(Debug, Serialize)]
struct TurnSummary {
    turn: u64,
    responses: Vec<String>,
    emitted: IntentMultiset,
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> Result<Json<TurnSummary>, ApiError> {
    let session = app.session(&id)?;
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if req.user.trim().is_empty() || req.text.trim().is_empty() {
        return Err(ApiError::bad_request("`user` and `text` must be non-empty"));
    }
    let mut guard = session
        .state
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::busy(&id))?;
    let time = req.time.unwrap_or_else(|| format_wire_time(&chrono::Utc::now()));
    let wire = WireMessage::new(req.user, req.text, time);
    let engine = session.engine.clone();
    let events = session.events.clone();
    let channel = id.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = engine
            .process(&mut guard, &wire)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        // sent under the channel lock so stream order is turn order
        let _ = events.send(TurnEvent {
            channel,
            message: wire,
            responses: outcome.responses.clone(),
            emitted: outcome.emitted.clone(),
            trace: outcome.trace.clone(),
        });
        Ok(Json(TurnSummary {
            turn: outcome.trace.turn,
            responses: outcome.responses,
            emitted: outcome.emitted,
        }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Serialize)]
struct StateView {
    channel: String,
    #[serde(flatten)]
    state: ProjectState,
}

async fn get_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<StateView>, ApiError> {
    let session = app.session(&id)?;
    let state = session.state.try_lock().map_err(|_| ApiError::busy(&id))?.clone();
    Ok(Json(StateView { channel: id, state }))
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    n: Option<usize>,
}

async fn get_history(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<HistoryQuery>, QueryRejection>,
) -> Result<Json<Vec<ambient_core::Message>>, ApiError> {
    let session = app.session(&id)?;
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let state = session.state.try_lock().map_err(|_| ApiError::busy(&id))?;
    let n = q.n.unwrap_or(state.history.len()).min(state.history.len());
    Ok(Json(state.history[state.history.len() - n..].to_vec()))
}

async fn get_events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = app.session(&id)?.events.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        let event = match rx.recv().await {
            Ok(ev) => Event::default()
                .event("trace")
                .id(ev.trace.turn.to_string())
                .json_data(&ev)
                .unwrap_or_else(|e| Event::default().event("error").data(e.to_string())),
            Err(broadcast::error::RecvError::Lagged(n)) => {
                warn!(skipped = n, "event subscriber lagged");
                Event::default().event("lagged").data(n.to_string())
            }
            Err(broadcast::error::RecvError::Closed) => return None,
        };
        Some((Ok(event), rx))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
