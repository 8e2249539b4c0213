//! Review HTTP API.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | GET | `/api/pairs/next` | next leased pair, or `{pair: null, progress}` |
//! | GET | `/api/pairs/{id}` | pair view |
//! | POST | `/api/pairs/{id}/decision` | `{action, instance_id?}`, returns the pair view |
//! | POST | `/api/pairs/{id}/lease` | renews the caller's lease |
//! | GET | `/api/progress` | counts |
//! | GET | `/files/{id}/t0.png`, `/files/{id}/t1.png` | pair images |
//! | GET | `/api/pairs/{id}/mask.png` | 4-class mask, pixel value = class code |
//! | GET | `/api/pairs/{id}/instances/{instance}.png` | binary instance mask |
//!
//! Callers identify themselves with the `x-reviewer` header; it doubles as
//! the lease session name.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use scd_core::annotation::{PseudoAnnotation, ReviewStatus};
use scd_core::review::{Checkout, Clock, Progress, ReviewAction, ReviewDecision, ReviewStore};
use scd_core::types::io::{bitmap_png_bytes, change_mask_png_bytes};
use scd_core::ScdError;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub const REVIEWER_HEADER: &str = "x-reviewer";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ReviewStore>,
    pub clock: Arc<dyn Clock>,
}

pub struct ApiError(ScdError);

impl From<ScdError> for ApiError {
    fn from(e: ScdError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ScdError::NotFound(_) => StatusCode::NOT_FOUND,
            ScdError::Conflict(_) => StatusCode::CONFLICT,
            ScdError::InvalidConfig(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceView {
    pub id: String,
    pub class: u8,
    pub class_name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    pub area: usize,
    pub mask_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: String,
    pub status: ReviewStatus,
    pub width: usize,
    pub height: usize,
    pub t0_url: Option<String>,
    pub t1_url: Option<String>,
    pub mask_url: String,
    pub instances: Vec<InstanceView>,
    pub object_phrases: Vec<String>,
    pub vegetation_phrases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease_expires: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub pair: Option<PairView>,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionBody {
    pub action: ReviewAction,
    #[serde(default)]
    pub instance_id: Option<String>,
}

fn view(store: &ReviewStore, a: &PseudoAnnotation, lease_expires: Option<DateTime<Utc>>) -> PairView {
    let (width, height) = a.mask.dims();
    let images = store.run_dir(&a.pair_id).is_some();
    let id = &a.pair_id;
    PairView {
        pair_id: id.clone(),
        status: a.status,
        width,
        height,
        t0_url: images.then(|| format!("/files/{id}/t0.png")),
        t1_url: images.then(|| format!("/files/{id}/t1.png")),
        mask_url: format!("/api/pairs/{id}/mask.png"),
        instances: a
            .instances
            .iter()
            .map(|i| InstanceView {
                id: i.instance.id.clone(),
                class: i.class.code(),
                class_name: i.class.name().to_string(),
                kind: format!("{:?}", i.kind).to_lowercase(),
                phrase: i.instance.phrase.clone(),
                area: i.instance.area(),
                mask_url: format!("/api/pairs/{id}/instances/{}.png", i.instance.id),
            })
            .collect(),
        object_phrases: a.caption.objects_only_in_b.clone(),
        vegetation_phrases: a.caption.vegetation_changed_b.clone(),
        lease_expires,
    }
}

fn checkout_view(store: &ReviewStore, c: &Checkout) -> PairView {
    view(store, &c.annotation, Some(c.expires))
}

fn reviewer(headers: &HeaderMap) -> ApiResult<String> {
    headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .ok_or_else(|| ScdError::InvalidConfig(format!("missing {REVIEWER_HEADER} header")).into())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ScdError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ScdError::Conflict(format!("worker failed: {e}")))?
        .map_err(ApiError)
}

async fn next_pair(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Json<NextResponse>> {
    let who = reviewer(&headers)?;
    let store = s.store.clone();
    let checkout = blocking(move || store.next_pending(&who)).await?;
    Ok(Json(NextResponse {
        pair: checkout.as_ref().map(|c| checkout_view(&s.store, c)),
        progress: s.store.progress(),
    }))
}

async fn get_pair(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<PairView>> {
    let a = s.store.get(&id)?;
    Ok(Json(view(&s.store, &a, None)))
}

async fn post_decision(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<DecisionBody>,
) -> ApiResult<Json<PairView>> {
    let decision = ReviewDecision {
        pair_id: id,
        action: body.action,
        instance_id: body.instance_id,
        reviewer: reviewer(&headers)?,
        timestamp: s.clock.now(),
    };
    let store = s.store.clone();
    let a = blocking(move || store.record(&decision)).await?;
    Ok(Json(view(&s.store, &a, None)))
}

async fn renew_lease(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Json<PairView>> {
    let who = reviewer(&headers)?;
    let c = s.store.renew(&id, &who)?;
    Ok(Json(checkout_view(&s.store, &c)))
}

async fn progress(State(s): State<AppState>) -> Json<Progress> {
    Json(s.store.progress())
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn mask_png(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let a = s.store.get(&id)?;
    Ok(png(change_mask_png_bytes(&a.mask)?))
}

async fn instance_png(State(s): State<AppState>, Path((id, file)): Path<(String, String)>) -> ApiResult<Response> {
    let a = s.store.get(&id)?;
    let iid = file
        .strip_suffix(".png")
        .ok_or_else(|| ScdError::NotFound(format!("{file} in pair {id}")))?;
    let inst = a
        .instances
        .iter()
        .find(|i| i.instance.id == iid)
        .ok_or_else(|| ScdError::NotFound(format!("instance {iid} in pair {id}")))?;
    Ok(png(bitmap_png_bytes(&inst.instance.bitmap)?))
}

async fn pair_image(State(s): State<AppState>, Path((id, file)): Path<(String, String)>) -> ApiResult<Response> {
    if file != "t0.png" && file != "t1.png" {
        return Err(ScdError::NotFound(format!("{file} in pair {id}")).into());
    }
    let dir: PathBuf = s
        .store
        .run_dir(&id)
        .ok_or_else(|| ScdError::NotFound(format!("images for pair {id}")))?
        .to_path_buf();
    let path = dir.join(&file);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ScdError::NotFound(format!("{}", path.display())))?;
    Ok(png(bytes))
}

/// API routes, plus UI assets from `static_dir` at `/` when given.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/pairs/next", get(next_pair))
        .route("/api/pairs/{id}", get(get_pair))
        .route("/api/pairs/{id}/decision", post(post_decision))
        .route("/api/pairs/{id}/lease", post(renew_lease))
        .route("/api/pairs/{id}/mask.png", get(mask_png))
        .route("/api/pairs/{id}/instances/{file}", get(instance_png))
        .route("/api/progress", get(progress))
        .route("/files/{id}/{file}", get(pair_image))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
