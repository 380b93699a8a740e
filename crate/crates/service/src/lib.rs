//! HTTP front end for a frozen checkpoint.
//!
//! Routes:
//! - `POST /translate`: `{direction, image, mask?}` with base64 PNGs, returns
//!   `{image, latencyMs}`.
//! - `POST /masks/sample`: a mask scheme object plus `seed` and optional
//!   `size`, returns `{mask, size, fraction}`.
//! - `GET /info`, `GET /health`.
//!
//! The model loads in the background; until it is ready every model-backed
//! route answers 503. Forward passes run one at a time on a blocking thread.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use base64::engine::general_purpose::STANDARD;
use candle_core::Device;
use maskcycle_core::img;
use maskcycle_core::mask_gen::{decode_png_resized, encode_png};
use maskcycle_core::{Checkpoint, Direction, Image, Mask, MaskSampler, MaskScheme, RngState};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub const DEFAULT_PORT: u16 = 8787;
pub const MAX_BODY_BYTES: usize = 10 * 1024 * 1024;
/// Mask size for `/masks/sample` when the request has none and no model is
/// loaded yet.
pub const DEFAULT_MASK_SIZE: usize = 128;
const MAX_MASK_SIZE: usize = 2048;

#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct ServiceInfo {
    pub checkpoint_id: String,
    pub resolution: usize,
    pub domains: [String; 2],
    pub scheme: MaskScheme,
    pub iteration: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TranslateRequest {
    direction: Direction,
    image: String,
    #[serde(default)]
    mask: Option<String>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TranslateResponse {
    image: String,
    latency_ms: f64,
}

#[derive(Deserialize)]
struct SampleRequest {
    #[serde(flatten)]
    scheme: MaskScheme,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    size: Option<usize>,
}

#[derive(Serialize)]
struct SampleResponse {
    mask: String,
    size: usize,
    fraction: f64,
}

struct Model {
    ckpt: Mutex<Checkpoint>,
    info: ServiceInfo,
}

/// Shared handler state. Cheap to clone.
#[derive(Clone, Default)]
pub struct AppState {
    model: Arc<OnceLock<Result<Model, String>>>,
}

impl AppState {
    /// State with no model yet; model routes answer 503.
    pub fn loading() -> Self {
        Self::default()
    }

    /// State serving `ckpt` immediately.
    pub fn ready(ckpt: Checkpoint, checkpoint_id: impl Into<String>) -> Self {
        let state = Self::loading();
        state.install(ckpt, checkpoint_id.into());
        state
    }

    /// Publishes a loaded checkpoint. Later calls are ignored.
    pub fn install(&self, ckpt: Checkpoint, checkpoint_id: String) {
        let info = ServiceInfo {
            checkpoint_id,
            resolution: ckpt.resolution(),
            domains: ckpt.domains.clone(),
            scheme: ckpt.scheme.clone(),
            iteration: ckpt.iteration,
        };
        let _ = self.model.set(Ok(Model {
            ckpt: Mutex::new(ckpt),
            info,
        }));
    }

    /// Records a load failure; `/health` reports it with 503.
    pub fn fail(&self, message: String) {
        let _ = self.model.set(Err(message));
    }

    pub fn is_ready(&self) -> bool {
        matches!(self.model.get(), Some(Ok(_)))
    }

    fn model(&self) -> Result<&Model, ApiError> {
        match self.model.get() {
            Some(Ok(m)) => Ok(m),
            Some(Err(e)) => Err(ApiError::unavailable(format!("checkpoint failed to load: {e}"))),
            None => Err(ApiError::unavailable("checkpoint is still loading".into())),
        }
    }
}

/// Short content hash used as the checkpoint id.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Reads and parses a checkpoint file, returning it with its id.
pub fn load_checkpoint(path: &Path) -> maskcycle_core::Result<(Checkpoint, String)> {
    let bytes = std::fs::read(path).map_err(|e| {
        maskcycle_core::Error::Load(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    let ckpt = Checkpoint::from_bytes(&bytes, &Device::Cpu)?;
    Ok((ckpt, checkpoint_id(&bytes)))
}

/// Loads `path` on a blocking thread and installs it into `state`.
pub fn spawn_load(state: AppState, path: PathBuf) -> tokio::task::JoinHandle<()> {
    tokio::task::spawn_blocking(move || match load_checkpoint(&path) {
        Ok((ckpt, id)) => {
            log::info!(
                "loaded {} (id {id}, resolution {}, iteration {})",
                path.display(),
                ckpt.resolution(),
                ckpt.iteration
            );
            state.install(ckpt, id);
        }
        Err(e) => {
            log::error!("{e}");
            state.fail(e.to_string());
        }
    })
}

struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn unavailable(message: String) -> Self {
        Self {
            status: StatusCode::SERVICE_UNAVAILABLE,
            message,
        }
    }

    fn internal(message: String) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message,
        }
    }
}

impl From<maskcycle_core::Error> for ApiError {
    fn from(e: maskcycle_core::Error) -> Self {
        if e.is_validation() {
            Self::bad_request(e.to_string())
        } else {
            Self::internal(e.to_string())
        }
    }
}

impl From<BytesRejection> for ApiError {
    fn from(r: BytesRejection) -> Self {
        Self {
            status: r.status(),
            message: r.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request: {e}")))
}

/// Accepts plain base64 or a `data:...;base64,` URL.
fn decode_base64(field: &str, value: &str) -> Result<Vec<u8>, ApiError> {
    let payload = match value.split_once(";base64,") {
        Some((prefix, rest)) if prefix.starts_with("data:") => rest,
        _ => value,
    };
    STANDARD
        .decode(payload.trim())
        .map_err(|e| ApiError::bad_request(format!("{field} is not valid base64: {e}")))
}

async fn translate(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<TranslateResponse>, ApiError> {
    let start = Instant::now();
    let model = state.model()?;
    let req: TranslateRequest = parse_json(&body?)?;
    let res = model.info.resolution;
    let image = Image::decode(&decode_base64("image", &req.image)?)?;
    let image = image.resize(res, res);
    let mask = match &req.mask {
        Some(m) => decode_png_resized(&decode_base64("mask", m)?, res)?,
        None => Mask::full(res),
    };

    let worker = state.clone();
    let out = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, ApiError> {
        let model = worker.model()?;
        let ckpt = model
            .ckpt
            .lock()
            .map_err(|_| ApiError::internal("model lock poisoned".into()))?;
        let device = Device::Cpu;
        let x = img::stack(std::slice::from_ref(&image), &device)?;
        let m = mask.to_tensor(&device)?;
        let y = ckpt.generators.get(req.direction).forward(&x, &m)?;
        let out = img::unstack(&y)?.remove(0);
        Ok(out.encode_png()?)
    })
    .await
    .map_err(|e| ApiError::internal(format!("inference task failed: {e}")))??;

    Ok(Json(TranslateResponse {
        image: STANDARD.encode(out),
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    }))
}

async fn sample_mask(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<SampleResponse>, ApiError> {
    let req: SampleRequest = parse_json(&body?)?;
    if matches!(req.scheme, MaskScheme::AttentionBinarize { .. }) {
        return Err(ApiError::bad_request(
            "attention-binarize needs attention maps on disk and cannot be sampled here",
        ));
    }
    let size = match (req.size, state.model()) {
        (Some(s), _) => s,
        (None, Ok(m)) => m.info.resolution,
        (None, Err(_)) => DEFAULT_MASK_SIZE,
    };
    if size == 0 || size > MAX_MASK_SIZE {
        return Err(ApiError::bad_request(format!(
            "size must be in 1..={MAX_MASK_SIZE}, got {size}"
        )));
    }
    let sampler = MaskSampler::new(req.scheme, size)?;
    let mask = sampler.sample(&mut RngState::new(req.seed))?;
    Ok(Json(SampleResponse {
        mask: STANDARD.encode(encode_png(&mask)?),
        size,
        fraction: mask.fraction(),
    }))
}

async fn info(State(state): State<AppState>) -> Result<Json<ServiceInfo>, ApiError> {
    Ok(Json(state.model()?.info.clone()))
}

async fn health(State(state): State<AppState>) -> Response {
    match state.model.get() {
        Some(Ok(_)) => Json(json!({ "status": "ok" })).into_response(),
        Some(Err(e)) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "failed", "error": e })),
        )
            .into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
    }
}

/// CORS for the given origins; an empty list allows any origin.
pub fn cors_layer(origins: &[String]) -> Result<CorsLayer, String> {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    if origins.is_empty() {
        return Ok(layer.allow_origin(Any));
    }
    let parsed = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| format!("invalid CORS origin {o:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(parsed)))
}

pub fn router(state: AppState, cors: CorsLayer) -> Router {
    Router::new()
        .route("/translate", post(translate))
        .route("/masks/sample", post(sample_mask))
        .route("/info", get(info))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(state)
}

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub checkpoint: PathBuf,
    pub host: String,
    pub port: u16,
    pub cors_origins: Vec<String>,
}

/// Binds, starts loading the checkpoint, and serves until the process ends.
pub async fn serve(cfg: ServeConfig) -> std::io::Result<()> {
    let cors = cors_layer(&cfg.cors_origins)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let addr: SocketAddr = format!("{}:{}", cfg.host, cfg.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bad address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let state = AppState::loading();
    spawn_load(state.clone(), cfg.checkpoint.clone());
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, cors)).await
}
