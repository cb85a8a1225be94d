//! HTTP routes.

use std::net::SocketAddr;
use std::sync::Arc;

use aquabot_core::corpus::serialize_story;
use aquabot_core::dialogue::{DialogueTracker, Event};
use aquabot_core::engine::TrainConfig;
use aquabot_core::eval::{export_augmented_corpus, Correction, CorrectionLog, InteractiveError};
use axum::body::Bytes;
use axum::extract::{ConnectInfo, Path, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::service::{Service, ServiceError};

pub const VERSION_HEADER: &str = "x-model-version";

pub type AppState = Arc<Service>;

/// JSON error body plus status.
#[derive(Debug)]
pub struct ApiError(StatusCode, serde_json::Value);

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError(status, json!({ "error": message.into() }))
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::NoModel => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unprocessable(_) | ServiceError::Corpus(..) | ServiceError::Ingest(..) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Engine(_) | ServiceError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": e.to_string() });
        if let ServiceError::Corpus(_, errors) = &e {
            body["details"] = errors
                .iter()
                .map(|c| {
                    json!({
                        "file": c.file.display().to_string(),
                        "line": c.line,
                        "kind": c.kind.to_string(),
                        "message": c.message,
                    })
                })
                .collect();
        }
        ApiError(status, body)
    }
}

impl From<InteractiveError> for ApiError {
    fn from(e: InteractiveError) -> Self {
        let status = match &e {
            InteractiveError::UnknownLabel(_) => StatusCode::BAD_REQUEST,
            InteractiveError::NothingPending | InteractiveError::ReviewPending | InteractiveError::IntentCommitted => {
                StatusCode::CONFLICT
            }
            InteractiveError::Engine(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parse a JSON body; an empty body yields `None`.
fn optional_json<T: DeserializeOwned>(body: &Bytes) -> ApiResult<Option<T>> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    serde_json::from_slice(body)
        .map(Some)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid JSON body: {e}")))
}

fn required_json<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    optional_json(body)?.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "request body is empty"))
}

fn with_version(version: &str, body: impl IntoResponse) -> Response {
    let mut r = body.into_response();
    if let Ok(v) = HeaderValue::from_str(version) {
        r.headers_mut().insert(VERSION_HEADER, v);
    }
    r
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model/version", get(model_version))
        .route("/model/train", post(train))
        .route("/model/evaluate", post(evaluate))
        .route("/webhooks/rest/{id}/messages", post(message))
        .route("/conversations/{id}/tracker", get(tracker))
        .route("/conversations/{id}/restart", post(restart))
        .route("/interactive/sessions", post(open_session))
        .route("/interactive/{sid}", get(session_state))
        .route("/interactive/{sid}/predict", post(predict))
        .route("/interactive/{sid}/confirm", post(confirm))
        .route("/interactive/{sid}/correct", post(correct))
        .route("/interactive/{sid}/rewind", post(rewind))
        .route("/interactive/{sid}/finish", post(finish))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such route") })
        .layer(middleware::from_fn(common_log))
        .with_state(state)
}

/// One line per request in common log format.
async fn common_log(req: Request, next: Next) -> Response {
    let ip = req
        .extensions()
        .get::<ConnectInfo<SocketAddr>>()
        .map_or_else(|| "-".to_string(), |c| c.0.ip().to_string());
    let line = format!("{} {} {:?}", req.method(), req.uri(), req.version());
    let res = next.run(req).await;
    let size = res
        .headers()
        .get(axum::http::header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("-")
        .to_string();
    let ts = chrono::Utc::now().format("%d/%b/%Y:%H:%M:%S %z");
    tracing::info!(target: "access", "{ip} - - [{ts}] \"{line}\" {} {size}", res.status().as_u16());
    res
}

async fn health(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "model_loaded": s.bundle().is_some(),
    }))
}

async fn model_version(State(s): State<AppState>) -> ApiResult<Response> {
    let b = s.require_bundle()?;
    Ok(with_version(&b.version, Json(json!({ "version": b.version }))))
}

async fn train(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let config: TrainConfig = optional_json(&body)?.unwrap_or_else(|| s.config.train.clone());
    let out = s.train(config).await?;
    Ok(with_version(&out.version.clone(), Json(out)))
}

async fn evaluate(State(s): State<AppState>) -> ApiResult<Response> {
    let out = s.evaluate().await?;
    Ok(with_version(&out.version.clone(), Json(out)))
}

#[derive(Debug, Deserialize)]
struct MessageIn {
    #[serde(default)]
    sender: Option<String>,
    message: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MessageOut {
    pub recipient_id: String,
    pub text: String,
}

async fn message(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let msg: MessageIn = required_json(&body)?;
    if msg.sender.as_deref().is_some_and(|sender| sender != id) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "sender does not match the conversation id",
        ));
    }
    let outcome = s.handle_message(&id, &msg.message).await?;
    let replies: Vec<MessageOut> = outcome
        .utterances
        .into_iter()
        .map(|text| MessageOut {
            recipient_id: id.clone(),
            text,
        })
        .collect();
    Ok(with_version(&outcome.version, Json(replies)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrackerView {
    pub conversation_id: String,
    pub events: Vec<Event>,
    pub slots: std::collections::BTreeMap<String, String>,
}

impl From<&DialogueTracker> for TrackerView {
    fn from(t: &DialogueTracker) -> Self {
        TrackerView {
            conversation_id: t.conversation_id.clone(),
            events: t.events().to_vec(),
            slots: t.slots().clone(),
        }
    }
}

async fn tracker(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<TrackerView>> {
    Ok(Json(TrackerView::from(&s.tracker(&id).await?)))
}

async fn restart(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<TrackerView>> {
    Ok(Json(TrackerView::from(&s.restart(&id).await?)))
}

#[derive(Debug, Default, Deserialize)]
struct OpenSession {
    #[serde(default)]
    session_id: Option<String>,
}

async fn open_session(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: OpenSession = optional_json(&body)?.unwrap_or_default();
    let (id, session) = s.open_session(req.session_id)?;
    let version = session.lock().await.bundle().version.clone();
    Ok(with_version(
        &version,
        (StatusCode::CREATED, Json(json!({ "session_id": id }))),
    ))
}

/// Lock a session for mutation; a second concurrent mutation gets 409.
macro_rules! mutate {
    ($s:expr, $sid:expr) => {{
        let shared = $s.session(&$sid)?;
        let guard = shared
            .try_lock_owned()
            .map_err(|_| ApiError::new(StatusCode::CONFLICT, "session is busy with another request"))?;
        guard
    }};
}

#[derive(Debug, Serialize)]
struct SessionView {
    session_id: String,
    tracker: TrackerView,
    pending: Option<aquabot_core::eval::Prediction>,
    corrections: CorrectionLog,
    transcript: String,
}

async fn session_state(State(s): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<SessionView>> {
    let shared = s.session(&sid)?;
    let session = shared.lock().await;
    Ok(Json(SessionView {
        session_id: sid,
        tracker: TrackerView::from(session.tracker()),
        pending: session.pending(),
        corrections: session.log().clone(),
        transcript: serialize_story(&session.transcript(), 0),
    }))
}

#[derive(Debug, Deserialize)]
struct PredictIn {
    message: String,
}

async fn predict(State(s): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: PredictIn = required_json(&body)?;
    if req.message.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "message is empty"));
    }
    let mut session = mutate!(s, sid);
    let p = session.step(&req.message, s.config.now())?;
    Ok(with_version(&session.bundle().version.clone(), Json(p)))
}

async fn confirm(State(s): State<AppState>, Path(sid): Path<String>) -> ApiResult<Response> {
    let mut session = mutate!(s, sid);
    let r = session.confirm(s.config.now())?;
    Ok(with_version(&session.bundle().version.clone(), Json(r)))
}

async fn correct(State(s): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Response> {
    let c: Correction = required_json(&body)?;
    let mut session = mutate!(s, sid);
    let r = session.correct(c, s.config.now())?;
    Ok(with_version(&session.bundle().version.clone(), Json(r)))
}

async fn rewind(State(s): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<TrackerView>> {
    let mut session = mutate!(s, sid);
    session.rewind(s.config.now())?;
    Ok(Json(TrackerView::from(session.tracker())))
}

#[derive(Debug, Serialize)]
pub struct FinishOut {
    pub session_id: String,
    /// This session's transcript as a story.
    pub story: String,
    /// Training stories with the transcript appended.
    pub augmented_stories: String,
    pub corrections: CorrectionLog,
}

async fn finish(State(s): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<FinishOut>> {
    let session = mutate!(s, sid);
    let transcript = session.transcript();
    let original = s.corpus()?.stories;
    let out = FinishOut {
        session_id: sid.clone(),
        story: serialize_story(&transcript, original.len()),
        augmented_stories: export_augmented_corpus(&original, std::slice::from_ref(&transcript)),
        corrections: session.log().clone(),
    };
    drop(session);
    s.close_session(&sid);
    Ok(Json(out))
}
