//! HTTP API backing the annotation tool.

pub mod storage;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use conekp::data::annotation::{parse_annotation, ConeAnnotation, ImageBounds};
use conekp::imaging::Image;
use conekp::model::KeypointModel;
use conekp::{ConeColor, Point};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use storage::{AnnotationStore, FsStore, ImageEntry, ImageStatus, StoredAnnotation, WriteOutcome};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<dyn AnnotationStore>,
    pub model: Option<Arc<KeypointModel>>,
}

impl AppState {
    pub fn new(store: Arc<dyn AnnotationStore>, model: Option<Arc<KeypointModel>>) -> Self {
        Self { store, model }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/images", get(list_images))
        .route("/api/images/{id}", get(image))
        .route("/api/annotations/{id}", get(annotation).put(put_annotation))
        .route("/api/annotations/{id}/reject", post(reject))
        .route("/api/predictions/{id}", get(predictions))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown image `{id}`"))
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
struct ListQuery {
    status: Option<String>,
}

#[derive(Serialize)]
struct Listing {
    images: Vec<ImageEntry>,
}

async fn list_images(State(s): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<Json<Listing>> {
    let filter = q
        .status
        .map(|v| v.parse::<ImageStatus>())
        .transpose()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let images = s
        .store
        .list()?
        .into_iter()
        .filter(|e| filter.is_none_or(|f| e.status == f))
        .collect();
    Ok(Json(Listing { images }))
}

fn image_bytes(s: &AppState, id: &str) -> ApiResult<Vec<u8>> {
    s.store.image(id)?.ok_or_else(|| ApiError::not_found(id))
}

async fn image(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = image_bytes(&s, &id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

/// Annotation plus its revision, as returned by every annotation endpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub annotation: ConeAnnotation,
    pub revision: u64,
}

async fn annotation(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<AnnotationResponse>> {
    image_bytes(&s, &id)?;
    let stored = s
        .store
        .annotation(&id)?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("image `{id}` has no annotation")))?;
    Ok(Json(AnnotationResponse {
        annotation: stored.annotation,
        revision: stored.revision,
    }))
}

#[derive(Deserialize)]
struct PutQuery {
    if_revision: Option<u64>,
}

fn bounds_of(bytes: &[u8]) -> ApiResult<ImageBounds> {
    let img = Image::from_png_bytes(bytes).map_err(|e| ApiError::from(anyhow::Error::from(e)))?;
    Ok(ImageBounds {
        width: img.width() as u32,
        height: img.height() as u32,
    })
}

async fn put_annotation(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PutQuery>,
    body: Bytes,
) -> ApiResult<Json<AnnotationResponse>> {
    let bounds = bounds_of(&image_bytes(&s, &id)?)?;
    let doc = std::str::from_utf8(&body).map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "body is not UTF-8"))?;
    let ann = parse_annotation(doc, bounds).map_err(|e| ApiError {
        status: StatusCode::BAD_REQUEST,
        body: json!({ "error": e.to_string(), "field": e.field() }),
    })?;
    if ann.image_id != id {
        return Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({
                "error": format!("field `image_id`: `{}` does not match the url id `{id}`", ann.image_id),
                "field": "image_id",
            }),
        });
    }
    match s.store.put(&id, &ann, q.if_revision)? {
        WriteOutcome::Written { revision } => Ok(Json(AnnotationResponse {
            annotation: ann,
            revision,
        })),
        WriteOutcome::Stale { current } => Err(ApiError {
            status: StatusCode::CONFLICT,
            body: json!({ "error": "stale revision; re-fetch and retry", "revision": current }),
        }),
    }
}

async fn reject(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<AnnotationResponse>> {
    image_bytes(&s, &id)?;
    let (annotation, revision) = s.store.update(&id, &|current| {
        let mut a = current.unwrap_or_else(|| ConeAnnotation {
            keypoints: Vec::new(),
            ..ConeAnnotation::new(id.as_str(), [[0.0; 2]; 6], ConeColor::Unknown)
        });
        a.rejected = true;
        a
    })?;
    Ok(Json(AnnotationResponse { annotation, revision }))
}

/// Model output in original image pixels.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub id: String,
    pub model: String,
    pub keypoints: Vec<Point>,
    pub confidences: Vec<f64>,
}

async fn predictions(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<PredictionResponse>> {
    let bytes = image_bytes(&s, &id)?;
    let Some(model) = s.model.clone() else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"));
    };
    let pred = tokio::task::spawn_blocking(move || -> anyhow::Result<PredictionResponse> {
        let img = Image::from_png_bytes(&bytes)?;
        let size = model.config.input_size;
        let (w, h) = (img.width(), img.height());
        let input = if (w, h) == (size, size) {
            img
        } else {
            img.resize(size, size)
        };
        let p = model.predict(&input)?;
        let (sx, sy) = (w as f64 / size as f64, h as f64 / size as f64);
        Ok(PredictionResponse {
            id,
            model: model.config.arch.label().to_string(),
            keypoints: p.keypoints.iter().map(|k| [k[0] * sx, k[1] * sy]).collect(),
            confidences: p.confidences,
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(pred))
}
