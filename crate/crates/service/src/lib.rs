//! HTTP front end for editing sessions.
//!
//! Every response carries an explicit status: 400 for validation errors,
//! 404 for unknown sessions, 409 when confirm or reject finds nothing
//! pending. Error bodies are `{"error": "..."}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use paintflow_core::edit::{EditRequest, SamplerOverrides, SessionManager};
use paintflow_core::image::{io, RasterImage};
use paintflow_core::Error;
use serde::Deserialize;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(Error::InvalidArgument(msg.into()))
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::InvalidArgument(_) | Error::Format(_) | Error::Image { .. } | Error::NonFinite(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn png(img: &RasterImage) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], io::encode_png(img)).into_response()
}

/// Body of a JSON session request: a blank canvas of the given size.
#[derive(Debug, Deserialize)]
struct ShapeBody {
    shape: [usize; 2],
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/session", post(create))
        .route("/session/{id}/edit", post(edit))
        .route("/session/{id}/confirm", post(confirm))
        .route("/session/{id}/reject", post(reject))
        .route("/session/{id}/canvas", get(canvas))
        .route("/session/{id}/state", get(state))
        .with_state(manager)
}

pub async fn serve(addr: SocketAddr, manager: Arc<SessionManager>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(manager)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> paintflow_core::Result<T> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(Error::Io {
            path: "<worker>".into(),
            source: std::io::Error::other(e.to_string()),
        })),
    }
}

fn multipart_err(e: axum::extract::multipart::MultipartError) -> ApiError {
    bad_request(format!("multipart: {e}"))
}

async fn create(State(m): State<Arc<SessionManager>>, req: Request) -> ApiResult<Response> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let (source, shape) = if is_multipart {
        let mut form = Multipart::from_request(req, &()).await.map_err(|e| bad_request(e.body_text()))?;
        let mut source = None;
        let mut shape = None;
        while let Some(field) = form.next_field().await.map_err(multipart_err)? {
            match field.name().unwrap_or_default() {
                "source" => source = Some(io::decode_png(&field.bytes().await.map_err(multipart_err)?)?),
                "shape" => {
                    let text = field.text().await.map_err(multipart_err)?;
                    let body: ShapeBody = serde_json::from_str(&format!("{{\"shape\":{text}}}"))
                        .map_err(|e| bad_request(format!("shape: {e}")))?;
                    shape = Some(body.shape);
                }
                other => return Err(bad_request(format!("unexpected field {other:?}"))),
            }
        }
        (source, shape)
    } else {
        let bytes = Bytes::from_request(req, &()).await.map_err(|e| bad_request(e.body_text()))?;
        let body: ShapeBody = serde_json::from_slice(&bytes).map_err(|e| bad_request(format!("json body: {e}")))?;
        (None, Some(body.shape))
    };
    let id = m.create(source, shape.map(|[h, w]| (h, w)))?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "id": id }))).into_response())
}

fn parse_num<T: std::str::FromStr>(name: &str, text: &str) -> ApiResult<T> {
    text.trim().parse().map_err(|_| bad_request(format!("{name} is not a valid number: {text:?}")))
}

async fn edit(State(m): State<Arc<SessionManager>>, Path(id): Path<String>, mut form: Multipart) -> ApiResult<Response> {
    let (mut mask, mut sketch, mut reference) = (None, None, None);
    let mut prompt = String::new();
    let mut sampler = SamplerOverrides::default();
    while let Some(field) = form.next_field().await.map_err(multipart_err)? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "mask" => mask = Some(io::decode_mask_png(&field.bytes().await.map_err(multipart_err)?)?),
            "sketch" => sketch = Some(io::decode_mask_png(&field.bytes().await.map_err(multipart_err)?)?),
            "reference" => reference = Some(io::decode_png(&field.bytes().await.map_err(multipart_err)?)?),
            "prompt" => prompt = field.text().await.map_err(multipart_err)?,
            "seed" => sampler.seed = Some(parse_num(&name, &field.text().await.map_err(multipart_err)?)?),
            "steps" => sampler.steps = Some(parse_num(&name, &field.text().await.map_err(multipart_err)?)?),
            "guidance" => sampler.guidance = Some(parse_num(&name, &field.text().await.map_err(multipart_err)?)?),
            other => return Err(bad_request(format!("unexpected field {other:?}"))),
        }
    }
    let req = EditRequest {
        mask: mask.ok_or_else(|| bad_request("missing mask"))?,
        sketch: sketch.ok_or_else(|| bad_request("missing sketch"))?,
        reference,
        prompt,
        sampler,
    };
    let preview = blocking(move || m.submit(&id, req)).await?;
    Ok(png(&preview))
}

async fn confirm(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png(&blocking(move || m.confirm(&id)).await?))
}

async fn reject(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png(&blocking(move || m.reject(&id)).await?))
}

async fn canvas(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png(&blocking(move || m.canvas(&id)).await?))
}

async fn state(State(m): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(move || m.state(&id)).await?).into_response())
}
