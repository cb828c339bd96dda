//! HTTP front end for an exported covifex model.
//!
//! `POST /api/v1/predict` takes a multipart upload (field `image`) and
//! answers with a [`PredictionResponse`]. `GET /api/v1/model` echoes the
//! deployment manifest, `GET /api/v1/health` reports liveness and
//! `GET /api/v1/schema` serves the response JSON schema. Every error is
//! `{"error": {"code": ..., "message": ...}}`.

mod model;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

pub use model::{
    BackendPool, LoadOptions, LoadedModel, ModelInfo, PredictError, PredictionResponse, SharedModel,
    StageTiming, DISCLAIMER, LABEL_NEGATIVE, LABEL_POSITIVE, THRESHOLD,
};

/// Upload limit in bytes.
pub const DEFAULT_MAX_UPLOAD: usize = 20 * 1024 * 1024;
pub const DEFAULT_PORT: u16 = 8080;
pub const PREDICTION_SCHEMA: &str = include_str!("../schema/prediction_response.schema.json");

pub const ENV_MODEL: &str = "COVIFEX_MODEL";
pub const ENV_EXTRACTOR_MODEL: &str = "COVIFEX_EXTRACTOR_MODEL";
pub const ENV_PORT: &str = "COVIFEX_PORT";

/// Shared by all handlers. The model slot is filled once loading finishes;
/// until then predictions answer 503.
#[derive(Clone)]
pub struct AppState {
    model: Arc<OnceLock<SharedModel>>,
    requests: Arc<AtomicU64>,
    audit_dir: Option<PathBuf>,
}

impl AppState {
    pub fn starting() -> Self {
        AppState {
            model: Arc::new(OnceLock::new()),
            requests: Arc::new(AtomicU64::new(0)),
            audit_dir: None,
        }
    }

    pub fn with_model(model: LoadedModel) -> Self {
        let s = Self::starting();
        s.install(model);
        s
    }

    /// Keeps a copy of every upload and its response in `dir`.
    pub fn with_audit_dir(mut self, dir: PathBuf) -> Self {
        self.audit_dir = Some(dir);
        self
    }

    /// Makes `model` live. Later calls are ignored.
    pub fn install(&self, model: LoadedModel) {
        let _ = self.model.set(Arc::new(model));
    }

    pub fn model(&self) -> Option<&SharedModel> {
        self.model.get()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_loaded() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "MODEL_NOT_LOADED", "model is still loading or failed to load")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

fn upload_error(status: StatusCode, message: String) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(
            status,
            "PAYLOAD_TOO_LARGE",
            format!("upload exceeds {} MB", DEFAULT_MAX_UPLOAD / (1024 * 1024)),
        )
    } else {
        ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }
}

async fn read_image_field(mp: std::result::Result<Multipart, MultipartRejection>) -> Result<Vec<u8>, ApiError> {
    let mut mp = mp.map_err(|e| upload_error(e.status(), e.body_text()))?;
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| upload_error(e.status(), e.body_text()))?
    {
        if field.name() == Some("image") {
            let bytes = field
                .bytes()
                .await
                .map_err(|e| upload_error(e.status(), e.body_text()))?;
            return Ok(bytes.to_vec());
        }
    }
    Err(ApiError::new(
        StatusCode::BAD_REQUEST,
        "MISSING_IMAGE",
        "multipart field `image` is required",
    ))
}

async fn predict(
    State(state): State<AppState>,
    mp: std::result::Result<Multipart, MultipartRejection>,
) -> Result<Json<PredictionResponse>, ApiError> {
    let model = state.model().cloned().ok_or_else(ApiError::not_loaded)?;
    let bytes = read_image_field(mp).await?;
    let n = state.requests.fetch_add(1, Ordering::Relaxed);
    let request_id = format!("req-{n:08}");
    let audit = state.audit_dir.clone();
    let (id, upload) = (request_id.clone(), bytes.clone());
    let out = tokio::task::spawn_blocking(move || model.predict(&bytes, request_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?;
    let resp = match out {
        Ok(r) => r,
        Err(PredictError::BadImage(m)) => {
            log::info!("{id}: rejected upload ({m})");
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "BAD_IMAGE", m));
        }
        Err(PredictError::Internal(m)) => {
            log::error!("{id}: {m}");
            return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", m));
        }
    };
    log::info!(
        "{id}: {} p={:.4} in {:.1} ms",
        resp.label,
        resp.probability_positive,
        resp.timing_ms.total
    );
    if let Some(dir) = audit {
        let json = serde_json::to_vec_pretty(&resp).unwrap_or_default();
        let written = std::fs::write(dir.join(format!("{id}.upload")), &upload)
            .and_then(|_| std::fs::write(dir.join(format!("{id}.json")), json));
        if let Err(e) = written {
            log::warn!("{id}: audit write failed: {e}");
        }
    }
    Ok(Json(resp))
}

async fn model_info(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let m = state.model().ok_or_else(ApiError::not_loaded)?;
    let mut v = serde_json::to_value(&m.manifest)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?;
    v["threshold"] = json!(THRESHOLD);
    v["labels"] = json!([LABEL_NEGATIVE, LABEL_POSITIVE]);
    Ok(Json(v))
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    let loaded = state.model().is_some();
    Json(json!({
        "status": if loaded { "ok" } else { "starting" },
        "model_loaded": loaded,
    }))
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], PREDICTION_SCHEMA)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    router_with_limit(state, DEFAULT_MAX_UPLOAD)
}

pub fn router_with_limit(state: AppState, max_upload: usize) -> Router {
    Router::new()
        .route("/api/v1/predict", post(predict))
        .route("/api/v1/model", get(model_info))
        .route("/api/v1/health", get(health))
        .route("/api/v1/schema", get(schema))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(max_upload))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub model: PathBuf,
    pub load: LoadOptions,
    pub port: u16,
    pub audit_dir: Option<PathBuf>,
}

impl ServeOptions {
    /// Reads `COVIFEX_MODEL`, `COVIFEX_EXTRACTOR_MODEL` and `COVIFEX_PORT`.
    pub fn from_env() -> Option<Self> {
        let model = std::env::var_os(ENV_MODEL)?.into();
        Some(ServeOptions {
            model,
            load: LoadOptions {
                extractor_model: std::env::var_os(ENV_EXTRACTOR_MODEL).map(Into::into),
                channels_last: false,
            },
            port: std::env::var(ENV_PORT)
                .ok()
                .and_then(|p| p.parse().ok())
                .unwrap_or(DEFAULT_PORT),
            audit_dir: None,
        })
    }
}

/// Binds, starts answering health checks at once and loads the model in
/// the background. A model that fails to load leaves the service in the
/// 503 state with the error logged.
pub async fn serve(opts: ServeOptions) -> std::io::Result<()> {
    let mut state = AppState::starting();
    if let Some(dir) = &opts.audit_dir {
        std::fs::create_dir_all(dir)?;
        state = state.with_audit_dir(dir.clone());
    }
    let addr = SocketAddr::from(([0, 0, 0, 0], opts.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || match LoadedModel::load(&opts.model, &opts.load) {
        Ok(m) => {
            log::info!(
                "model ready: {} + {}",
                m.manifest.extractor,
                m.manifest.classifier_name
            );
            loader.install(m);
        }
        Err(e) => log::error!("model load failed: {e}"),
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
