//! HTTP API over a review store.
//!
//! Reads take a shared lock and see only committed decisions. Every decision
//! takes the write lock for its whole validate, log, apply sequence, so two
//! racing decisions on one item cannot both succeed.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use actlabel_core::review::{Action, QueueFilter, ReviewError, ReviewItem, ReviewStore};
use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub struct AppState {
    store: RwLock<ReviewStore>,
}

impl AppState {
    pub fn new(store: ReviewStore) -> Arc<Self> {
        Arc::new(AppState {
            store: RwLock::new(store),
        })
    }
}

pub struct ApiError(ReviewError);

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            ReviewError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            ReviewError::AlreadyDecided(_) => (StatusCode::CONFLICT, "AlreadyDecided"),
            ReviewError::UnknownLabel(_) => (StatusCode::UNPROCESSABLE_ENTITY, "UnknownLabel"),
            ReviewError::MissingLabel => (StatusCode::BAD_REQUEST, "MissingLabel"),
            ReviewError::BadAction(_) => (StatusCode::BAD_REQUEST, "BadAction"),
            ReviewError::StoreCorrupt(_) => (StatusCode::INTERNAL_SERVER_ERROR, "StoreCorrupt"),
            ReviewError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "Io"),
        };
        (
            status,
            Json(json!({ "error": code, "message": self.0.to_string() })),
        )
            .into_response()
    }
}

#[derive(Deserialize)]
struct QueueParams {
    status: Option<String>,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct QueuePage {
    items: Vec<ReviewItem>,
    total: usize,
}

#[derive(Deserialize)]
pub struct DecisionBody {
    pub action: String,
    #[serde(default)]
    pub label: Option<String>,
}

type Shared = State<Arc<AppState>>;

async fn queue(State(st): Shared, Query(q): Query<QueueParams>) -> Response {
    let filter = match q.status.as_deref() {
        None | Some("pending") => QueueFilter::Pending,
        Some("decided") => QueueFilter::Decided,
        Some("all") => QueueFilter::All,
        Some(other) => {
            let msg = format!("status must be pending, decided or all, got {other:?}");
            return (
                StatusCode::BAD_REQUEST,
                Json(json!({ "error": "BadStatus", "message": msg })),
            )
                .into_response();
        }
    };
    let (items, total) = st.store.read().expect("store lock").queue(filter, q.limit);
    Json(QueuePage { items, total }).into_response()
}

async fn item(
    State(st): Shared,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ReviewItem>, ApiError> {
    let store = st.store.read().expect("store lock");
    store
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or(ApiError(ReviewError::NotFound(id)))
}

async fn decide(
    State(st): Shared,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<DecisionBody>,
) -> Result<Json<ReviewItem>, ApiError> {
    let action = Action::parse(&body.action, body.label.as_deref())?;
    let mut store = st.store.write().expect("store lock");
    Ok(Json(store.apply(&id, action)?))
}

async fn stats(State(st): Shared) -> Response {
    Json(st.store.read().expect("store lock").stats()).into_response()
}

async fn classes(State(st): Shared) -> Response {
    Json(st.store.read().expect("store lock").classes().to_vec()).into_response()
}

fn content_type(path: &Path) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    }
}

async fn media(State(st): Shared, UrlPath(id): UrlPath<String>) -> Response {
    let crop = st
        .store
        .read()
        .expect("store lock")
        .get(&id)
        .and_then(|i| i.crop_path.clone());
    let Some(path) = crop else {
        return StatusCode::NOT_FOUND.into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => (
            [(header::CONTENT_TYPE, content_type(&path))],
            Body::from(bytes),
        )
            .into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// API routes, plus the static review UI from `ui_dir` when given.
pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/item/{id}", get(item))
        .route("/api/item/{id}/decision", post(decide))
        .route("/api/stats", get(stats))
        .route("/api/classes", get(classes))
        .route("/media/{item_id}", get(media))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(listener: TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
