use std::collections::HashMap;
use std::future::Future;
use std::pin::Pin;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use peer_agent_core::agent::AgentPersona;
use peer_agent_core::context::{Phase, Speaker};
use peer_agent_core::domain::{DilemmaCard, DilemmaCatalog, DomainError, OpinionState, PlayerId, Stance};
use peer_agent_core::session::{
    deliberate, token_sha256, EventSink, NullSink, PendingTrigger, Runtime, Session, SessionError, SessionEvent,
    SessionStatus,
};
use peer_agent_core::EngineConfig;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;
use tracing::{error, info, warn};

use crate::store::LogStore;

const BROADCAST_CAPACITY: usize = 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    pub catalog: DilemmaCatalog,
    pub persona: AgentPersona,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            catalog: DilemmaCatalog::builtin(),
            persona: AgentPersona::default_peer(),
        }
    }
}

struct Slot {
    session: Session,
    sink: Box<dyn EventSink + Send>,
}

struct SessionHandle {
    slot: Mutex<Slot>,
    tx: broadcast::Sender<SessionEvent>,
}

impl SessionHandle {
    fn new(session: Session, sink: Box<dyn EventSink + Send>) -> Arc<Self> {
        let (tx, _) = broadcast::channel(BROADCAST_CAPACITY);
        Arc::new(Self { slot: Mutex::new(Slot { session, sink }), tx })
    }

    /// Runs a command under the session's writer lock and publishes what it appended.
    fn command<T>(
        &self,
        rt: &Runtime,
        f: impl FnOnce(&mut Session, &mut dyn EventSink, &Runtime) -> Result<(Vec<SessionEvent>, T), SessionError>,
    ) -> Result<(Vec<SessionEvent>, T), ApiError> {
        let mut slot = self.slot.lock().unwrap_or_else(|p| p.into_inner());
        let Slot { session, sink } = &mut *slot;
        let (events, out) = f(session, sink.as_mut(), rt)?;
        for event in &events {
            // no subscribers is fine
            let _ = self.tx.send(event.clone());
        }
        Ok((events, out))
    }
}

pub struct AppState {
    rt: Runtime,
    config: ServiceConfig,
    store: Option<LogStore>,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl AppState {
    /// Builds the service state, resuming every session found in `store`.
    pub fn new(rt: Runtime, config: ServiceConfig, store: Option<LogStore>) -> std::io::Result<Arc<Self>> {
        let mut sessions = HashMap::new();
        if let Some(store) = &store {
            for loaded in store.load_all()? {
                match loaded {
                    Ok(session) => {
                        let sink = store.sink(session.id())?;
                        sessions.insert(session.id().to_string(), SessionHandle::new(session, Box::new(sink)));
                    }
                    Err(err) => error!(%err, "skipping unreadable session log"),
                }
            }
        }
        Ok(Arc::new(Self { rt, config, store, sessions: RwLock::new(sessions) }))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Copy of a session's log.
    pub fn log(&self, session_id: &str) -> Option<Vec<SessionEvent>> {
        let handle = self.handle(session_id).ok()?;
        let slot = handle.slot.lock().unwrap_or_else(|p| p.into_inner());
        Some(slot.session.log().to_vec())
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(err: SessionError) -> Self {
        let (status, code) = match &err {
            SessionError::WrongStatus { actual: SessionStatus::Closed, .. } => (StatusCode::CONFLICT, "session_closed"),
            SessionError::WrongStatus { .. } => (StatusCode::CONFLICT, "wrong_status"),
            SessionError::UnknownPlayer(_) => (StatusCode::FORBIDDEN, "unknown_player"),
            SessionError::DuplicatePlayer(_) => (StatusCode::CONFLICT, "duplicate_player"),
            SessionError::SessionFull => (StatusCode::CONFLICT, "session_full"),
            SessionError::StanceAlreadySubmitted(_) => (StatusCode::CONFLICT, "stance_already_submitted"),
            SessionError::EmptyText => (StatusCode::UNPROCESSABLE_ENTITY, "empty_text"),
            SessionError::Domain(DomainError::InvalidConfidence(_)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_confidence")
            }
            SessionError::Domain(_) | SessionError::Config(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_input"),
            SessionError::Persist(_) => (StatusCode::SERVICE_UNAVAILABLE, "persistence_failed"),
            SessionError::Invariant(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/dilemmas", get(list_dilemmas))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/players", post(join))
        .route("/sessions/{id}/stance", post(submit_stance))
        .route("/sessions/{id}/utterance", post(post_utterance))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/events", get(events_ws))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn bearer_player(handle: &SessionHandle, headers: &HeaderMap) -> ApiResult<PlayerId> {
    let token = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing_token", "bearer token required"))?;
    let digest = token_sha256(token.trim());
    let slot = handle.slot.lock().unwrap_or_else(|p| p.into_inner());
    slot.session
        .state()
        .participants
        .iter()
        .find(|p| p.token_sha256 == digest)
        .map(|p| p.player_id.clone())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "invalid_token", "token does not belong to this session"))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ViewQuery {
    debug: bool,
    wait: bool,
    since: u64,
}

fn visible(events: &[SessionEvent], debug: bool) -> Vec<&SessionEvent> {
    events.iter().filter(|e| debug || !e.body.is_debug()).collect()
}

async fn list_dilemmas(State(state): State<Arc<AppState>>) -> Json<Vec<DilemmaCard>> {
    Json(state.config.catalog.cards().to_vec())
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.session_ids())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CreateSession {
    dilemma_id: Option<String>,
    dilemma: Option<DilemmaCard>,
    seed: Option<u64>,
    config: Option<EngineConfig>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Option<Json<CreateSession>>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let dilemma = match (req.dilemma, req.dilemma_id) {
        (Some(card), _) => card,
        (None, Some(id)) => state.config.catalog.get(&id).cloned().ok_or_else(|| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_dilemma", format!("no dilemma {id}"))
        })?,
        (None, None) => state
            .config
            .catalog
            .cards()
            .first()
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_dilemma", "catalog is empty"))?,
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let seed = req.seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
    let config = req.config.unwrap_or_else(|| state.config.engine.clone());
    let st = state.clone();
    let session_id = id.clone();
    let session = blocking(move || {
        let mut sink: Box<dyn EventSink + Send> = match &st.store {
            Some(store) => Box::new(store.sink(&session_id).map_err(|e| ApiError::internal(e.to_string()))?),
            None => Box::new(NullSink),
        };
        let session =
            Session::create(&st.rt, sink.as_mut(), session_id, dilemma, config, seed, st.config.persona.clone())?;
        Ok((session, sink))
    })
    .await?;
    let (session, sink) = session;
    let body = json!({
        "session_id": id,
        "dilemma": session.state().dilemma,
        "seed": seed,
        "status": session.state().status,
    });
    state
        .sessions
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .insert(id.clone(), SessionHandle::new(session, sink));
    info!(session = %id, "session created");
    Ok((StatusCode::CREATED, Json(body)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JoinRequest {
    player_id: String,
}

async fn join(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<JoinRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let player = PlayerId::new(req.player_id.trim());
    if player.as_str().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", "player_id is empty"));
    }
    let handle = state.handle(&id)?;
    let token = uuid::Uuid::new_v4().simple().to_string();
    let digest = token_sha256(&token);
    let (rt, p) = (state.rt.clone(), player.clone());
    blocking(move || handle.command(&rt, |s, sink, rt| Ok((s.join(rt, sink, p, digest)?, ())))).await?;
    Ok((StatusCode::CREATED, Json(json!({"player_id": player, "token": token}))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StanceRequest {
    stance: Stance,
    confidence: u8,
}

async fn submit_stance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<StanceRequest>,
) -> ApiResult<Json<Value>> {
    let handle = state.handle(&id)?;
    let player = bearer_player(&handle, &headers)?;
    let opinion = OpinionState::new(player.as_str(), req.stance, req.confidence).map_err(SessionError::from)?;
    let rt = state.rt.clone();
    let h = handle.clone();
    let (events, status) = blocking(move || {
        h.command(&rt, |s, sink, rt| {
            let events = s.submit_stance(rt, sink, opinion)?;
            Ok((events, s.state().status))
        })
    })
    .await?;
    Ok(Json(json!({"status": status, "events": visible(&events, false)})))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRequest {
    text: String,
}

async fn post_utterance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
    headers: HeaderMap,
    Json(req): Json<UtteranceRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let handle = state.handle(&id)?;
    let player = bearer_player(&handle, &headers)?;
    let rt = state.rt.clone();
    let h = handle.clone();
    let (mut events, pending) = blocking(move || {
        h.command(&rt, |s, sink, rt| s.begin_utterance(rt, sink, &player, &req.text))
    })
    .await?;
    let seq = events.iter().find_map(|e| e.body.trigger_seq());
    let task = tokio::spawn(run_deliberation(state.clone(), handle, pending));
    if !q.wait {
        return Ok((StatusCode::ACCEPTED, Json(json!({"seq": seq, "events": visible(&events, q.debug)}))));
    }
    events.extend(task.await.map_err(|e| ApiError::internal(e.to_string()))??);
    Ok((StatusCode::OK, Json(json!({"seq": seq, "events": visible(&events, q.debug)}))))
}

/// Runs the thought pipeline off the lock, commits its outcome, and arms
/// the silence heartbeat when configured.
fn run_deliberation(
    state: Arc<AppState>,
    handle: Arc<SessionHandle>,
    pending: PendingTrigger,
) -> Pin<Box<dyn Future<Output = ApiResult<Vec<SessionEvent>>> + Send>> {
    Box::pin(deliberation_task(state, handle, pending))
}

async fn deliberation_task(
    state: Arc<AppState>,
    handle: Arc<SessionHandle>,
    pending: PendingTrigger,
) -> ApiResult<Vec<SessionEvent>> {
    let heartbeat = pending.config.generator.heartbeat_secs;
    let rt = state.rt.clone();
    let deliberation = blocking(move || Ok(deliberate(&pending, &rt))).await?;
    let rt = state.rt.clone();
    let h = handle.clone();
    let (events, last_seq) = blocking(move || {
        h.command(&rt, |s, sink, rt| {
            let events = s.commit_deliberation(rt, sink, deliberation)?;
            Ok((events, s.state().last_seq))
        })
    })
    .await
    .inspect_err(|err| warn!(?err, "committing deliberation failed"))?;
    let silent = !events.is_empty() && !events.iter().any(|e| e.kind() == "AgentSpoke");
    if let (Some(secs), true) = (heartbeat, silent) {
        tokio::spawn(heartbeat_after(state, handle, last_seq, Duration::from_secs(secs)));
    }
    Ok(events)
}

async fn heartbeat_after(state: Arc<AppState>, handle: Arc<SessionHandle>, seen_seq: u64, delay: Duration) {
    tokio::time::sleep(delay).await;
    let pending = {
        let slot = handle.slot.lock().unwrap_or_else(|p| p.into_inner());
        if slot.session.state().last_seq != seen_seq {
            return;
        }
        slot.session.heartbeat_trigger()
    };
    if let Some(pending) = pending {
        if let Err(err) = run_deliberation(state, handle, pending).await {
            warn!(?err, "heartbeat failed");
        }
    }
}

async fn session_state(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> ApiResult<Json<SessionView>> {
    let handle = state.handle(&id)?;
    let slot = handle.slot.lock().unwrap_or_else(|p| p.into_inner());
    Ok(Json(SessionView::of(&slot.session, q.debug)))
}

#[derive(Debug, Serialize)]
struct PlayerView {
    player_id: PlayerId,
    stance: Option<Stance>,
    confidence: Option<u8>,
}

#[derive(Debug, Serialize)]
struct TurnView {
    seq: u64,
    speaker: String,
    text: String,
}

#[derive(Debug, Serialize)]
struct AgentView {
    name: String,
    stance: Stance,
}

#[derive(Debug, Serialize)]
struct SessionView {
    session_id: String,
    status: SessionStatus,
    dilemma: DilemmaCard,
    players: Vec<PlayerView>,
    agent: Option<AgentView>,
    phase: Phase,
    transcript: Vec<TurnView>,
    last_seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    debug: Option<Value>,
}

impl SessionView {
    fn of(session: &Session, debug: bool) -> Self {
        let st = session.state();
        Self {
            session_id: st.session_id.clone(),
            status: st.status,
            dilemma: st.dilemma.clone(),
            players: st
                .participants
                .iter()
                .map(|p| {
                    let opinion = st.opinion(&p.player_id);
                    PlayerView {
                        player_id: p.player_id.clone(),
                        stance: opinion.map(|o| o.stance),
                        confidence: opinion.map(|o| o.confidence.get()),
                    }
                })
                .collect(),
            agent: st.agent.as_ref().map(|a| AgentView { name: a.persona.name.clone(), stance: a.position }),
            phase: st.phase,
            transcript: st
                .transcript
                .utterances()
                .iter()
                .map(|u| TurnView {
                    seq: u.seq,
                    speaker: match &u.speaker {
                        Speaker::Player(p) => p.to_string(),
                        Speaker::Agent => "agent".to_string(),
                    },
                    text: u.text.clone(),
                })
                .collect(),
            last_seq: st.last_seq,
            debug: debug.then(|| {
                json!({
                    "seed": st.seed,
                    "positioning": st.positioning,
                    "agent": st.agent,
                    "estimates": st.estimates,
                    "pending_shift": st.pending_shift,
                    "human_turns": st.human_turns,
                    "config": st.config,
                })
            }),
        }
    }
}

async fn close(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    let handle = state.handle(&id)?;
    let player = bearer_player(&handle, &headers)?;
    let rt = state.rt.clone();
    let h = handle.clone();
    let (events, _) =
        blocking(move || h.command(&rt, |s, sink, rt| Ok((s.close(rt, sink, format!("closed by {player}"))?, ()))))
            .await?;
    Ok(Json(json!({"status": SessionStatus::Closed, "events": visible(&events, false)})))
}

async fn events_ws(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let handle = state.handle(&id)?;
    Ok(ws.on_upgrade(move |socket| stream_events(socket, handle, q)))
}

/// Sends the backlog after `since`, then live events. Subscribing under the
/// writer lock means nothing falls between the two.
async fn stream_events(mut socket: WebSocket, handle: Arc<SessionHandle>, q: ViewQuery) {
    let (backlog, mut rx) = {
        let slot = handle.slot.lock().unwrap_or_else(|p| p.into_inner());
        let backlog: Vec<SessionEvent> = slot.session.log().iter().filter(|e| e.seq > q.since).cloned().collect();
        (backlog, handle.tx.subscribe())
    };
    for event in backlog.iter().filter(|e| q.debug || !e.body.is_debug()) {
        if socket.send(Message::Text(event.to_json_line().into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            event = rx.recv() => match event {
                Ok(event) => {
                    if !q.debug && event.body.is_debug() {
                        continue;
                    }
                    if socket.send(Message::Text(event.to_json_line().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    warn!(skipped = n, "subscriber lagged; closing so it can resume with ?since");
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
