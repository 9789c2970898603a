//! REST routes. Errors are `{"error": {"code", "message"}}`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use slideforge::textbook::{CustomizationSpec, TextbookError};
use tower_http::services::ServeDir;

use crate::jobs::{Job, JobState};
use crate::pipeline::Runner;
use crate::upload::{UploadError, UploadKind, UploadPolicy};

/// Slack on top of the upload limit for multipart framing and the
/// customization field.
const BODY_OVERHEAD: usize = 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub runner: Runner,
    pub policy: UploadPolicy,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown_job(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownJob", format!("no job with id {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<UploadError> for ApiError {
    fn from(e: UploadError) -> Self {
        match e {
            UploadError::InvalidFileType(_) => Self::new(StatusCode::BAD_REQUEST, "InvalidFileType", e.to_string()),
            UploadError::TooLarge { .. } => Self::new(StatusCode::PAYLOAD_TOO_LARGE, "TooLarge", e.to_string()),
        }
    }
}

fn multipart_error(e: axum::extract::multipart::MultipartError, limit: u64) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "TooLarge",
            format!("upload exceeds the {limit}-byte limit"),
        )
    } else {
        ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.body_text())
    }
}

const FALLBACK_INDEX: &str = "<!doctype html>\n<html lang=\"en\">\n<head><meta charset=\"utf-8\"><title>slideforge</title></head>\n<body>\n<h1>slideforge</h1>\n<p>The web interface is not installed. Set <code>static_dir</code> to serve it, or use the API under <code>/api</code>.</p>\n</body>\n</html>\n";

pub fn router(state: AppState) -> Router {
    let limit = usize::try_from(state.policy.max_bytes)
        .unwrap_or(usize::MAX)
        .saturating_add(BODY_OVERHEAD);
    let static_dir = state.static_dir.clone();
    let api = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/models", get(list_models))
        .route(
            "/api/jobs",
            axum::routing::post(create_job).layer(DefaultBodyLimit::max(limit)),
        )
        .route("/api/jobs/{id}", get(get_status).delete(delete_job))
        .route("/api/jobs/{id}/result", get(get_result))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(FALLBACK_INDEX) })),
    }
}

#[derive(Serialize)]
struct ModelView {
    id: String,
    display_name: String,
    provider: slideforge::textbook::Provider,
    available: bool,
}

async fn list_models(State(state): State<AppState>) -> Json<Vec<ModelView>> {
    let models = state
        .runner
        .services()
        .registry
        .models
        .iter()
        .map(|m| ModelView {
            id: m.id.clone(),
            display_name: if m.display_name.is_empty() {
                m.id.clone()
            } else {
                m.display_name.clone()
            },
            provider: m.provider,
            available: m.is_available(),
        })
        .collect();
    Json(models)
}

#[derive(Serialize, Deserialize)]
pub struct Created {
    pub job_id: String,
}

async fn create_job(State(state): State<AppState>, mut multipart: Multipart) -> Result<Response, ApiError> {
    let legacy = state.runner.services().legacy.is_some();
    let limit = state.policy.max_bytes;
    let mut file: Option<(String, UploadKind, Vec<u8>)> = None;
    let mut customization: Option<String> = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| multipart_error(e, limit))? {
        match field.name() {
            Some("file") => {
                let name = field.file_name().unwrap_or_default().to_string();
                let kind = state.policy.check_name(&name, legacy)?;
                let bytes = field.bytes().await.map_err(|e| multipart_error(e, limit))?;
                state.policy.check(&name, &bytes, legacy)?;
                file = Some((name, kind, bytes.to_vec()));
            }
            Some("customization") => {
                customization = Some(field.text().await.map_err(|e| multipart_error(e, limit))?);
            }
            _ => {}
        }
    }
    let (name, kind, bytes) =
        file.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "MissingFile", "the form needs a `file` field"))?;
    let registry = &state.runner.services().registry;
    let text = customization.ok_or_else(|| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "InvalidCustomization",
            "the form needs a `customization` field",
        )
    })?;
    let spec = CustomizationSpec::from_json(&text, |m| registry.contains(m)).map_err(|e| {
        let message = match e {
            TextbookError::UnknownModel(m) => format!("unknown model {m:?}; see GET /api/models"),
            other => other.to_string(),
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidCustomization", message)
    })?;

    let store = state.runner.store().clone();
    let internal = |e: std::io::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string());
    let job = store.create(&name, spec).map_err(internal)?;
    let input = store.job_dir(&job.id).join(match kind {
        UploadKind::Pptx => "input.pptx",
        UploadKind::LegacyPpt => "input.ppt",
    });
    tokio::fs::write(&input, &bytes).await.map_err(internal)?;
    state.runner.spawn(job.id.clone(), input, kind);
    Ok((StatusCode::ACCEPTED, Json(Created { job_id: job.id })).into_response())
}

async fn get_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Job>, ApiError> {
    state
        .runner
        .store()
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::unknown_job(&id))
}

#[derive(Deserialize)]
struct ResultQuery {
    format: Option<String>,
}

async fn get_result(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<ResultQuery>,
) -> Result<Response, ApiError> {
    let store = state.runner.store();
    let job = store.get(&id).ok_or_else(|| ApiError::unknown_job(&id))?;
    let format = query.format.as_deref().unwrap_or("markdown");
    let (artifact, content_type, file_name) = match format {
        "markdown" => {
            if job.state != JobState::Done {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "NotReady",
                    format!("the textbook is not ready; job is {}", job.state.as_str()),
                ));
            }
            (job.artifact_paths.book_md, "text/markdown; charset=utf-8", "book.md")
        }
        "deck-json" => (job.artifact_paths.deck_json, "application/json", "deck.json"),
        other => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "InvalidFormat",
                format!("unknown format {other:?}; use markdown or deck-json"),
            ))
        }
    };
    let artifact = artifact.ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "NotReady",
            format!("{format} is not available yet; job is {}", job.state.as_str()),
        )
    })?;
    let bytes = tokio::fs::read(store.job_dir(&id).join(artifact))
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "UnknownJob", e.to_string()))?;
    Ok((
        [
            (header::CONTENT_TYPE, content_type.to_string()),
            (header::CONTENT_DISPOSITION, format!("inline; filename=\"{file_name}\"")),
        ],
        Body::from(bytes),
    )
        .into_response())
}

async fn delete_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let store = state.runner.store();
    let job = store.get(&id).ok_or_else(|| ApiError::unknown_job(&id))?;
    if !job.state.is_terminal() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "JobRunning",
            format!("job is {}; delete it once it has finished", job.state.as_str()),
        ));
    }
    store.remove(&id);
    let dir = store.job_dir(&id);
    if let Err(e) = tokio::fs::remove_dir_all(&dir).await {
        if e.kind() != std::io::ErrorKind::NotFound {
            tracing::warn!(dir = %dir.display(), "delete left files behind: {e}");
        }
    }
    Ok(StatusCode::NO_CONTENT)
}

/// Serves until ctrl-c, running cleanup on a timer.
pub async fn serve(
    state: AppState,
    addr: std::net::SocketAddr,
    cleanup_every: std::time::Duration,
    max_age: chrono::Duration,
) -> std::io::Result<()> {
    let store: Arc<crate::jobs::JobStore> = state.runner.store().clone();
    let sweeper = tokio::spawn(async move {
        let mut ticker = tokio::time::interval(cleanup_every.max(std::time::Duration::from_secs(1)));
        loop {
            ticker.tick().await;
            let store = store.clone();
            let now = store.now();
            let removed = tokio::task::spawn_blocking(move || crate::cleanup::cleanup_tick(&store, now, max_age))
                .await
                .unwrap_or(0);
            if removed > 0 {
                tracing::info!(removed, "cleaned up expired jobs");
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweeper.abort();
    result
}
