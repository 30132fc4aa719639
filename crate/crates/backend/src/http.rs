//! HTTP API consumed by the dashboard.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use smartfridge_broker::{Client, ClientError};
use smartfridge_core::ExperimentSummary;
use smartfridge_sim::{settings_topic, Settings};
use smartfridge_wire::TopicName;
use tracing::{info, warn};

use crate::auth::{Auth, AuthError, Session};
use crate::recipes::{suggest_recipes, Catalog};
use crate::store::{Collection, SettingsRecord, Store, StoreError};

pub const DEFAULT_RANGE_LIMIT: usize = 1000;
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "BAD_REQUEST"),
            ApiError::Unauthorized(_) => (StatusCode::UNAUTHORIZED, "UNAUTHORIZED"),
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "NOT_FOUND"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "CONFLICT"),
            ApiError::Unprocessable(_) => (StatusCode::UNPROCESSABLE_ENTITY, "UNPROCESSABLE"),
            ApiError::Unavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "UNAVAILABLE"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.parts();
        (status, Json(json!({ "error": code, "message": self.to_string() }))).into_response()
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::EmptyUsername | AuthError::ShortPassword => {
                ApiError::Unprocessable(e.to_string())
            }
            AuthError::UsernameTaken => ApiError::Conflict(e.to_string()),
            AuthError::InvalidCredentials | AuthError::InvalidToken => {
                ApiError::Unauthorized(e.to_string())
            }
            AuthError::Hash(_) | AuthError::Store(_) => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::InvalidRange { .. } | StoreError::InvalidLimit => {
                ApiError::BadRequest(e.to_string())
            }
            StoreError::UnknownCollection(_) => ApiError::NotFound(e.to_string()),
            StoreError::UsernameTaken(_) => ApiError::Conflict(e.to_string()),
            StoreError::Io(_) | StoreError::OutOfOrder { .. } => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::Unprocessable(e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Broker connection used to push settings to devices; reconnects lazily.
pub struct SettingsPublisher {
    broker: SocketAddr,
    client_id: String,
    client: tokio::sync::Mutex<Option<Client>>,
}

impl SettingsPublisher {
    pub fn new(broker: SocketAddr, client_id: impl Into<String>) -> Self {
        Self {
            broker,
            client_id: client_id.into(),
            client: tokio::sync::Mutex::new(None),
        }
    }

    pub async fn publish(&self, topic: &TopicName, body: Vec<u8>) -> Result<(), ClientError> {
        let mut slot = self.client.lock().await;
        for attempt in 0..2 {
            if slot.is_none() {
                let mut c = Client::connect(self.broker, &self.client_id).await?;
                c.keep_alive(std::time::Duration::from_secs(20));
                *slot = Some(c);
            }
            let client = slot.as_ref().expect("connected above");
            match client.publish(topic, body.clone()).await {
                Ok(()) => return Ok(()),
                Err(e) if attempt == 0 => {
                    warn!(error = %e, "settings publisher reconnecting");
                    *slot = None;
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("loop returns on the second attempt")
    }
}

pub struct AppState {
    pub store: Arc<Store>,
    pub auth: Auth,
    pub catalog: Catalog,
    pub publisher: Option<SettingsPublisher>,
    pub reports_dir: Option<PathBuf>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/auth/register", post(register))
        .route("/api/auth/login", post(login))
        .route("/api/auth/logout", post(logout))
        .route("/api/devices", get(devices))
        .route("/api/latest/image", get(latest_image))
        .route("/api/latest/counts", get(latest_counts))
        .route("/api/latest/fridgestats", get(latest_fridgestats))
        .route("/api/fridgestats", get(fridgestats))
        .route("/api/settings", get(get_settings).post(post_settings))
        .route("/api/recipes", get(recipes))
        .route("/api/calibration/report", get(calibration_report))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct Credentials {
    username: String,
    password: String,
}

async fn register(
    State(app): State<Arc<AppState>>,
    body: Result<Json<Credentials>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(c) = body?;
    let auth = app.clone();
    let user = tokio::task::spawn_blocking(move || auth.auth.register(&c.username, &c.password))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    info!(username = user.username.as_str(), "user registered");
    Ok((
        StatusCode::CREATED,
        Json(json!({ "username": user.username, "createdAt": user.created_at })),
    ))
}

async fn login(
    State(app): State<Arc<AppState>>,
    body: Result<Json<Credentials>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(c) = body?;
    let auth = app.clone();
    let issued = tokio::task::spawn_blocking(move || auth.auth.login(&c.username, &c.password))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(json!({ "token": issued.token, "expiresAt": issued.expires_at })))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let token = value.strip_prefix("Bearer ")?.trim();
    (!token.is_empty()).then_some(token)
}

fn authenticate(app: &AppState, headers: &HeaderMap) -> ApiResult<Session> {
    let token = bearer(headers).ok_or_else(|| ApiError::Unauthorized("missing bearer token".into()))?;
    Ok(app.auth.check(token)?)
}

async fn logout(State(app): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<StatusCode> {
    let token = bearer(&headers).ok_or_else(|| ApiError::Unauthorized("missing bearer token".into()))?;
    if app.auth.logout(token) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::Unauthorized("unknown token".into()))
    }
}

#[derive(Debug, Deserialize)]
struct DeviceQuery {
    device: String,
}

async fn devices(State(app): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(app.store.snapshot().devices())
}

fn latest(app: &AppState, q: Result<Query<DeviceQuery>, QueryRejection>, c: Collection) -> ApiResult<Response> {
    let Query(q) = q?;
    app.store
        .snapshot()
        .latest(c, &q.device)
        .map(|r| Json(r).into_response())
        .ok_or_else(|| ApiError::NotFound(format!("no records for device {:?}", q.device)))
}

async fn latest_image(
    State(app): State<Arc<AppState>>,
    q: Result<Query<DeviceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    latest(&app, q, Collection::Images)
}

async fn latest_counts(
    State(app): State<Arc<AppState>>,
    q: Result<Query<DeviceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    latest(&app, q, Collection::Counts)
}

async fn latest_fridgestats(
    State(app): State<Arc<AppState>>,
    q: Result<Query<DeviceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    latest(&app, q, Collection::Fridgestats)
}

#[derive(Debug, Deserialize)]
struct RangeQuery {
    device: String,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    limit: Option<usize>,
}

async fn fridgestats(
    State(app): State<Arc<AppState>>,
    q: Result<Query<RangeQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let result = app.store.snapshot().range(
        Collection::Fridgestats,
        &q.device,
        q.from,
        q.to,
        q.limit.unwrap_or(DEFAULT_RANGE_LIMIT),
    )?;
    Ok(Json(result).into_response())
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(rename_all = "camelCase")]
struct SettingsBody {
    device_id: String,
    temperature_target: f64,
    humidity_target: f64,
}

async fn post_settings(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<SettingsBody>, JsonRejection>,
) -> ApiResult<Response> {
    let session = authenticate(&app, &headers)?;
    let Json(body) = body?;
    if body.device_id.is_empty() || body.device_id.contains(['/', '+', '#']) {
        return Err(ApiError::Unprocessable(format!("invalid deviceId {:?}", body.device_id)));
    }
    let settings = Settings {
        temperature_target: body.temperature_target,
        humidity_target: body.humidity_target,
    };
    settings
        .validate()
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let record = SettingsRecord {
        device_id: body.device_id.clone(),
        temperature_target: settings.temperature_target,
        humidity_target: settings.humidity_target,
        updated_at: Utc::now(),
    };
    app.store.put_settings(record.clone())?;
    let publisher = app
        .publisher
        .as_ref()
        .ok_or_else(|| ApiError::Unavailable("no broker configured".into()))?;
    let topic = TopicName::new(settings_topic(&body.device_id))
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let payload = serde_json::to_vec(&settings).expect("settings serialise");
    publisher
        .publish(&topic, payload)
        .await
        .map_err(|e| ApiError::Unavailable(format!("broker: {e}")))?;
    info!(
        device_id = body.device_id.as_str(),
        username = session.username.as_str(),
        ?settings,
        "settings published"
    );
    Ok(Json(record).into_response())
}

async fn get_settings(
    State(app): State<Arc<AppState>>,
    q: Result<Query<DeviceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    app.store
        .settings(&q.device)
        .map(|r| Json(r).into_response())
        .ok_or_else(|| ApiError::NotFound(format!("no settings for device {:?}", q.device)))
}

async fn recipes(
    State(app): State<Arc<AppState>>,
    q: Result<Query<DeviceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let latest = app.store.snapshot().latest_counts(&q.device);
    let counts: BTreeMap<String, u32> = latest.as_ref().map(|c| c.counts.clone()).unwrap_or_default();
    let recipes = suggest_recipes(&counts, &app.catalog);
    Ok(Json(json!({
        "deviceId": q.device,
        "timestamp": latest.map(|c| c.timestamp),
        "counts": counts,
        "recipes": recipes,
    }))
    .into_response())
}

#[derive(Debug, Deserialize)]
struct ModelQuery {
    model: String,
}

async fn calibration_report(
    State(app): State<Arc<AppState>>,
    q: Result<Query<ModelQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let dir = app
        .reports_dir
        .as_ref()
        .ok_or_else(|| ApiError::NotFound("no reports directory configured".into()))?;
    let path = dir.join(SUMMARY_FILE);
    let text = tokio::fs::read_to_string(&path)
        .await
        .map_err(|e| ApiError::NotFound(format!("{}: {e}", path.display())))?;
    let summary: ExperimentSummary =
        serde_json::from_str(&text).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
    let model = summary
        .models
        .get(&q.model)
        .ok_or_else(|| ApiError::NotFound(format!("no report for model {:?}", q.model)))?;
    let temperature = (summary.temperature.model == q.model).then_some(&summary.temperature);
    Ok(Json(json!({
        "model": q.model,
        "seed": summary.seed,
        "epochs": summary.epochs,
        "summary": model,
        "temperature": temperature,
        "verdict": summary.verdict,
    }))
    .into_response())
}
