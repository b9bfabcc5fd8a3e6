//! HTTP adapter over the annotation store, analytics and evaluation reports.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use icuau_core::analytics::{association_table, labeled_frames, AssociationOptions};
use icuau_core::au::{description, AuId, PAIN_ICU_AUS};
use icuau_core::data::{AnnotationDoc, AnnotationStore, AuLabel, DataError, PainReport, UpsertOutcome};
use icuau_core::eval::EvalReport;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

/// Order in which an annotator is offered frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AssignmentOrder {
    #[default]
    Ascending,
    /// A fixed per-annotator permutation derived from `seed`.
    Shuffled { seed: u64 },
}

pub struct AppState {
    pub store: Arc<AnnotationStore>,
    pub reports: Vec<PainReport>,
    /// Base directory for relative `image_path`s.
    pub image_root: PathBuf,
    /// JSON `EvalReport` written by the evaluator; absent until a run happens.
    pub metrics_path: Option<PathBuf>,
    pub association: AssociationOptions,
    pub order: AssignmentOrder,
}

impl AppState {
    pub fn new(store: Arc<AnnotationStore>, reports: Vec<PainReport>, image_root: impl Into<PathBuf>) -> Self {
        Self {
            store,
            reports,
            image_root: image_root.into(),
            metrics_path: None,
            association: AssociationOptions::default(),
            order: AssignmentOrder::Ascending,
        }
    }

    /// Next frame the annotator has not labelled yet.
    pub fn next_frame_id(&self, annotator: &str) -> Option<String> {
        match self.order {
            AssignmentOrder::Ascending => self.store.next_frame(annotator).map(|f| f.frame_id.clone()),
            AssignmentOrder::Shuffled { seed } => {
                let mut h = DefaultHasher::new();
                annotator.hash(&mut h);
                let mut ids: Vec<&str> = self.store.frames().map(|f| f.frame_id.as_str()).collect();
                ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ h.finish()));
                ids.into_iter()
                    .find(|id| self.store.get(id, annotator).is_none())
                    .map(str::to_string)
            }
        }
    }

    /// The association payload exactly as served.
    pub fn association_json(&self) -> Result<String, ApiError> {
        let frames = labeled_frames(&self.store).map_err(|e| ApiError::Internal(e.to_string()))?;
        association_table(&frames, &self.reports, &self.association)
            .and_then(|t| t.to_json())
            .map_err(|e| ApiError::Internal(e.to_string()))
    }

    pub fn latest_metrics(&self) -> Result<Option<EvalReport>, ApiError> {
        let Some(path) = &self.metrics_path else {
            return Ok(None);
        };
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| ApiError::Internal(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ApiError::Internal(e.to_string())),
        }
    }

    fn image_path(&self, stored: &str) -> PathBuf {
        let p = Path::new(stored);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.image_root.join(p)
        }
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let msg = self.to_string();
        (status, Json(ErrorBody { error: &msg })).into_response()
    }
}

impl From<DataError> for ApiError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::UnknownFrame(_) => ApiError::NotFound(e.to_string()),
            DataError::UnknownAu(_)
            | DataError::Intensity { .. }
            | DataError::IntensityWithoutPresence(_)
            | DataError::Empty(_) => ApiError::Unprocessable(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuSchemaEntry {
    pub au_id: AuId,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextFrame {
    pub frame_id: String,
    pub image_url: String,
    pub au_schema: Vec<AuSchemaEntry>,
}

pub fn au_schema() -> Vec<AuSchemaEntry> {
    PAIN_ICU_AUS
        .iter()
        .map(|&(au_id, _)| AuSchemaEntry {
            au_id,
            description: description(au_id).unwrap_or_default().to_string(),
        })
        .collect()
}

/// Body of `POST /api/annotations`. `submitted_at` defaults to the server clock.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub frame_id: String,
    pub annotator_id: String,
    pub labels: BTreeMap<AuId, AuLabel>,
    #[serde(default)]
    pub submitted_at: Option<DateTime<Utc>>,
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_frame(State(state): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let annotator = q
        .annotator
        .filter(|a| !a.is_empty())
        .ok_or_else(|| ApiError::BadRequest("query parameter `annotator` is required".into()))?;
    Ok(match state.next_frame_id(&annotator) {
        Some(frame_id) => Json(NextFrame {
            image_url: format!("/api/frames/{frame_id}/image"),
            frame_id,
            au_schema: au_schema(),
        })
        .into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let sub: Submission = serde_json::from_slice(&body).map_err(|e| {
        if e.is_data() {
            ApiError::Unprocessable(e.to_string())
        } else {
            ApiError::BadRequest(e.to_string())
        }
    })?;
    if state.store.frame(&sub.frame_id).is_none() {
        return Err(ApiError::NotFound(format!("unknown frame id {}", sub.frame_id)));
    }
    let doc = AnnotationDoc::new(
        sub.frame_id,
        sub.annotator_id,
        sub.labels,
        sub.submitted_at.unwrap_or_else(Utc::now),
    )?;
    let store = state.store.clone();
    let (outcome, stored) = tokio::task::spawn_blocking(move || {
        let key = (doc.frame_id.clone(), doc.annotator_id.clone());
        let outcome = store.upsert(doc)?;
        let stored = store.get(&key.0, &key.1).expect("document just stored");
        Ok::<_, DataError>((outcome, stored))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    let status = match outcome {
        UpsertOutcome::Created => StatusCode::CREATED,
        UpsertOutcome::Updated | UpsertOutcome::Unchanged => StatusCode::OK,
    };
    Ok((status, Json(stored)).into_response())
}

/// Content type from the file's leading bytes.
pub fn sniff_content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if bytes.starts_with(b"\xff\xd8\xff") {
        "image/jpeg"
    } else if bytes.len() > 2 && bytes[0] == b'P' && (b'1'..=b'6').contains(&bytes[1]) {
        "image/x-portable-anymap"
    } else {
        "application/octet-stream"
    }
}

async fn frame_image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let frame = state
        .store
        .frame(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown frame id {id}")))?;
    let path = state.image_path(&frame.image_path);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::NotFound(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, sniff_content_type(&bytes))], bytes).into_response())
}

async fn progress(State(state): State<Arc<AppState>>) -> Response {
    Json(state.store.progress()).into_response()
}

fn json_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn association(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    Ok(json_text(state.association_json()?))
}

async fn metrics_latest(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    match state.latest_metrics()? {
        Some(report) => Ok(json_text(report.to_json())),
        None => Err(ApiError::NotFound("no evaluation has run".into())),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Directory served at `/` (the annotation console).
    pub static_dir: Option<PathBuf>,
    pub cors: bool,
}

pub fn router(state: Arc<AppState>, opts: &ServerOptions) -> Router {
    let mut app = Router::new()
        .route("/api/frames/next", get(next_frame))
        .route("/api/frames/{id}/image", get(frame_image))
        .route("/api/annotations", post(submit))
        .route("/api/progress", get(progress))
        .route("/api/analysis/association", get(association))
        .route("/api/metrics/latest", get(metrics_latest))
        .with_state(state);
    if let Some(dir) = &opts.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    if opts.cors {
        app = app.layer(CorsLayer::permissive());
    }
    app
}

/// Binds and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}

/// Directory of the bundled console.
pub fn bundled_console_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("static")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sniffing() {
        assert_eq!(sniff_content_type(b"\x89PNG\r\n\x1a\nrest"), "image/png");
        assert_eq!(sniff_content_type(b"P6\n2 2\n255\n"), "image/x-portable-anymap");
        assert_eq!(sniff_content_type(b"GIF89a"), "application/octet-stream");
    }

    #[test]
    fn schema_lists_twelve_aus() {
        let s = au_schema();
        assert_eq!(s.len(), 12);
        assert_eq!(s[0].au_id, 4);
        assert!(s.iter().all(|e| !e.description.is_empty()));
    }
}
