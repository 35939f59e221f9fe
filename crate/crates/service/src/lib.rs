//! Session-oriented HTTP + WebSocket API for rating-driven training.
//!
//! A session owns one [`Trainer`]. Each response that leaves the session in
//! `awaiting_rating` carries the next track; the same track is also pushed
//! as a `track_ready` event on `/sessions/{id}/events`. Ratings arrive by
//! POST with an idempotency token, and a replayed token returns the original
//! reply without touching the Q-table.

mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hitl_music::agent::{QTable, Trainer};
use hitl_music::midi::export_midi;
use hitl_music::persist::{list_models, load_model, model_path, save_model, TrainingSummary};
use hitl_music::rater::{EvaluationFeedback, EvaluationStore, Expertise};
use hitl_music::{GenConfig, HyperParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, Mutex, RwLock};

pub use error::ApiError;
pub use session::{EpisodeDone, Progress, RatingReply, Session, SessionDetail, SessionView};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub models_dir: PathBuf,
    pub evaluations: PathBuf,
    /// When set, every session is written here after each finished episode.
    pub snapshot_dir: Option<PathBuf>,
}

struct SessionHandle {
    session: Mutex<Session>,
    events: broadcast::Sender<Value>,
}

pub struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    evaluations: EvaluationStore,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Arc<Self>, ApiError> {
        if let Some(dir) = &config.snapshot_dir {
            std::fs::create_dir_all(dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
        }
        let evaluations = EvaluationStore::open(&config.evaluations)?;
        Ok(Arc::new(AppState {
            config,
            sessions: RwLock::new(HashMap::new()),
            evaluations,
        }))
    }

    async fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session {id}")))
    }

    async fn insert(&self, session: Session) -> Arc<SessionHandle> {
        let (events, _) = broadcast::channel(64);
        let id = session.id.clone();
        let handle = Arc::new(SessionHandle {
            session: Mutex::new(session),
            events,
        });
        self.sessions.write().await.insert(id, handle.clone());
        handle
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/rating", post(submit_rating))
        .route("/sessions/{id}/progress", get(get_progress))
        .route("/sessions/{id}/track.mid", get(get_midi))
        .route("/sessions/{id}/log.csv", get(get_log))
        .route("/sessions/{id}/evaluation", post(submit_evaluation))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/from-model/{name}", post(session_from_model))
        .route("/models", get(get_models))
        .route("/models/{name}/save", post(save_session_model))
        .with_state(state)
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    std::fs::create_dir_all(&config.models_dir)?;
    let state = AppState::new(config).map_err(|e| std::io::Error::other(e.message))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn json_field<T: DeserializeOwned>(body: &Value, key: &str) -> Result<Option<T>, ApiError> {
    match body.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| ApiError::bad_request(format!("{key}: {e}"))),
    }
}

/// Overlays the keys present in `patch` onto `base`'s JSON form.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>, what: &str) -> Result<T, ApiError> {
    let mut merged = serde_json::to_value(base).expect("serializes");
    match patch {
        None | Some(Value::Null) => {}
        Some(Value::Object(fields)) => {
            for (k, v) in fields {
                if merged.get(k).is_none() {
                    return Err(ApiError::bad_request(format!("{what}: unknown field {k:?}")));
                }
                merged[k] = v.clone();
            }
        }
        Some(_) => return Err(ApiError::bad_request(format!("{what} must be an object"))),
    }
    serde_json::from_value(merged).map_err(|e| ApiError::bad_request(format!("{what}: {e}")))
}

fn parse_body(body: &str) -> Result<Value, ApiError> {
    if body.trim().is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    serde_json::from_str(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn start_session(
    state: &AppState,
    config: GenConfig,
    hp: HyperParams,
    q: QTable,
    prior: TrainingSummary,
) -> Result<Response, ApiError> {
    let mut trainer = Trainer::new(config, hp, q)?;
    trainer.start()?;
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session::new(id, trainer, prior);
    let view = session.view();
    let handle = state.insert(session).await;
    let _ = handle.events.send(handle.session.lock().await.track_ready_event().expect("just started"));
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

/// `POST /sessions` with `{"config": {...}, "hyperparams": {...}}`. Omitted
/// fields take their defaults; `steps_per_episode` defaults to the track
/// length.
async fn create_session(State(state): State<Arc<AppState>>, body: String) -> Result<Response, ApiError> {
    let body = parse_body(&body)?;
    let config: GenConfig = overlay(&GenConfig::default(), body.get("config"), "config")?;
    config.validate().map_err(|e| ApiError {
        field: e.field(),
        ..ApiError::bad_request(e.to_string())
    })?;
    let hp = overlay(&HyperParams::for_config(&config), body.get("hyperparams"), "hyperparams")?;
    start_session(&state, config, hp, QTable::new(), TrainingSummary::default()).await
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionDetail>, ApiError> {
    let handle = state.handle(&id).await?;
    let session = handle.session.lock().await;
    Ok(Json(session.detail()))
}

async fn submit_rating(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: String,
) -> Result<Json<Value>, ApiError> {
    let handle = state.handle(&id).await?;
    let body = parse_body(&body)?;
    let token: String = json_field(&body, "token")?.ok_or_else(|| ApiError::invalid_field("token", "token is required"))?;
    let rating: i64 =
        json_field(&body, "rating")?.ok_or_else(|| ApiError::invalid_field("rating", "rating is required"))?;

    let mut session = handle.session.lock().await;
    if let Some(previous) = session.replies.get(&token) {
        return Ok(Json(previous.clone()));
    }
    let rating = u8::try_from(rating)
        .ok()
        .filter(|r| (1..=10).contains(r))
        .ok_or_else(|| ApiError::invalid_field("rating", format!("rating {rating} is outside 1..=10")))?;
    let rated = session.rate(rating, now_millis())?;
    let reply = serde_json::to_value(&rated.reply).expect("serializes");
    session.replies.insert(token, reply.clone());
    if rated.reply.episode_done.is_some() {
        if let Some(dir) = &state.config.snapshot_dir {
            let path = model_path(dir, &format!("session-{}", session.id));
            if let Err(e) = save_model(&path, &session.model()) {
                log::warn!("snapshot failed: {e}");
            }
        }
    }
    drop(session);
    for ev in rated.events {
        let _ = handle.events.send(ev);
    }
    Ok(Json(reply))
}

async fn get_progress(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Progress>, ApiError> {
    let handle = state.handle(&id).await?;
    let session = handle.session.lock().await;
    Ok(Json(session.progress()))
}

async fn get_midi(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = state.handle(&id).await?;
    let session = handle.session.lock().await;
    let track = session
        .trainer
        .current_track()
        .ok_or_else(|| ApiError::not_found("current track"))?;
    let bytes = export_midi(track, session.trainer.config()).into_bytes();
    Ok(([(header::CONTENT_TYPE, "audio/midi")], bytes).into_response())
}

/// Completed-episode log as CSV (`episode,step,state_key,action,explored,reward`).
async fn get_log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = state.handle(&id).await?;
    let session = handle.session.lock().await;
    let csv = session.trainer.log().to_csv();
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

#[derive(Deserialize)]
struct EvaluationBody {
    musicality: u8,
    novelty: u8,
    coherence: u8,
    #[serde(default)]
    comment: String,
    expertise: Expertise,
}

async fn submit_evaluation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: String,
) -> Result<Response, ApiError> {
    state.handle(&id).await?;
    let body: EvaluationBody =
        serde_json::from_value(parse_body(&body)?).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let feedback = EvaluationFeedback {
        session_id: id,
        musicality: body.musicality,
        novelty: body.novelty,
        coherence: body.coherence,
        comment: body.comment,
        expertise: body.expertise,
    };
    let record_id = state.evaluations.record(&feedback)?;
    Ok((StatusCode::CREATED, Json(json!({ "record_id": record_id, "evaluation": feedback }))).into_response())
}

fn check_model_name(name: &str) -> Result<(), ApiError> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::invalid_field("name", format!("invalid model name {name:?}")))
    }
}

/// `POST /models/{name}/save` with `{"session_id": "..."}`.
async fn save_session_model(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
    body: String,
) -> Result<Response, ApiError> {
    check_model_name(&name)?;
    let body = parse_body(&body)?;
    let id: String =
        json_field(&body, "session_id")?.ok_or_else(|| ApiError::invalid_field("session_id", "session_id is required"))?;
    let handle = state.handle(&id).await?;
    let model = handle.session.lock().await.model();
    let models_dir = state.config.models_dir.clone();
    std::fs::create_dir_all(&models_dir).map_err(|e| ApiError::internal(e.to_string()))?;
    save_model(&model_path(&models_dir, &name), &model)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "name": name,
            "episodes_completed": model.summary.episodes_completed,
            "total_steps": model.summary.total_steps,
        })),
    )
        .into_response())
}

/// `POST /sessions/from-model/{name}`; an optional `{"hyperparams": {...}}`
/// overrides the stored hyperparameters for the continued training.
async fn session_from_model(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
    body: String,
) -> Result<Response, ApiError> {
    check_model_name(&name)?;
    let path = model_path(&state.config.models_dir, &name);
    if !path.exists() {
        return Err(ApiError::not_found(format!("model {name}")));
    }
    let model = load_model(&path)?;
    let body = parse_body(&body)?;
    let hp = overlay(&model.hyperparams, body.get("hyperparams"), "hyperparams")?;
    start_session(&state, model.config, hp, model.qtable, model.summary).await
}

#[derive(Serialize)]
struct ModelEntry {
    name: String,
    saved_at: Option<u64>,
    episodes_completed: Option<u64>,
    error: Option<String>,
}

async fn get_models(State(state): State<Arc<AppState>>) -> Result<Json<Vec<ModelEntry>>, ApiError> {
    if !state.config.models_dir.exists() {
        return Ok(Json(Vec::new()));
    }
    let list = list_models(&state.config.models_dir)?
        .into_iter()
        .map(|m| ModelEntry {
            name: m.name,
            saved_at: m
                .saved_at
                .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                .map(|d| d.as_millis() as u64),
            episodes_completed: m.episodes_completed,
            error: m.error,
        })
        .collect();
    Ok(Json(list))
}

async fn events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let handle = state.handle(&id).await?;
    Ok(ws.on_upgrade(move |socket| stream_events(socket, handle)))
}

async fn stream_events(mut socket: WebSocket, handle: Arc<SessionHandle>) {
    // Subscribe before reading the current state so nothing falls between.
    let mut rx = handle.events.subscribe();
    let current = handle.session.lock().await.track_ready_event();
    if let Some(ev) = current {
        if socket.send(Message::Text(ev.to_string().into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Ok(ev) => {
                    if socket.send(Message::Text(ev.to_string().into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return,
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
