//! JSON-over-HTTP front end for the audit UI.
//!
//! Request bodies are parsed by hand rather than through axum's `Json`
//! extractor so that every malformed body, including wrong grid shapes,
//! comes back as a 400 with an `{"error": ...}` body.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reward_lens::counterfactual::Scenario;
use reward_lens::gridworld::{EnvKind, EnvSpec};
use reward_lens::interpret::OcclusionConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{self, GridPair, LoadedModel, SaliencyRequest, SampleRequest};
use crate::paths;

#[derive(Debug, Clone)]
pub struct AppState {
    /// Readers clone the inner `Arc` and drop the lock before computing, so a
    /// swap never waits on a long request and never exposes a partial model.
    model: Arc<RwLock<Option<Arc<LoadedModel>>>>,
    envs: Arc<Vec<EnvSpec>>,
    occlusion: OcclusionConfig,
}

impl Default for AppState {
    fn default() -> Self {
        Self {
            model: Arc::new(RwLock::new(None)),
            envs: Arc::new(EnvKind::ALL.into_iter().map(EnvSpec::new).collect()),
            occlusion: OcclusionConfig::default(),
        }
    }
}

impl AppState {
    pub fn with_model(model: LoadedModel) -> Self {
        let state = Self::default();
        state.swap(model);
        state
    }

    pub fn with_occlusion(mut self, cfg: OcclusionConfig) -> Self {
        self.occlusion = cfg;
        self
    }

    pub fn active(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn swap(&self, model: LoadedModel) {
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(model));
    }
}

#[derive(Debug)]
pub struct ApiError {
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
}

impl From<reward_lens::Error> for ApiError {
    fn from(e: reward_lens::Error) -> Self {
        Self::bad_request(e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn require_model(state: &AppState) -> Result<Arc<LoadedModel>, ApiError> {
    state.active().ok_or(ApiError {
        status: StatusCode::CONFLICT,
        message: "no model loaded; POST /api/model/load first".into(),
    })
}

/// Runs CPU-bound evaluation off the async workers.
async fn compute<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> reward_lens::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: format!("evaluation task failed: {e}"),
        })?
        .map_err(ApiError::from)
}

async fn reward(State(state): State<AppState>, body: Bytes) -> ApiResult<model::RewardResponse> {
    let pair: GridPair = parse(&body)?;
    let m = require_model(&state)?;
    Ok(Json(compute(move || model::reward(&m, &pair)).await?))
}

async fn saliency_gradient(State(state): State<AppState>, body: Bytes) -> ApiResult<model::SaliencyResponse> {
    let req: SaliencyRequest = parse(&body)?;
    let m = require_model(&state)?;
    let pair = GridPair { s: req.s, sp: req.sp };
    Ok(Json(compute(move || model::gradient(&m, &pair, req.signed)).await?))
}

async fn saliency_occlusion(State(state): State<AppState>, body: Bytes) -> ApiResult<model::SaliencyResponse> {
    let req: SaliencyRequest = parse(&body)?;
    let m = require_model(&state)?;
    let cfg = req.occlusion.apply(state.occlusion);
    let pair = GridPair { s: req.s, sp: req.sp };
    Ok(Json(compute(move || model::occlusion(&m, &pair, &cfg)).await?))
}

async fn envs(State(state): State<AppState>) -> Json<Vec<model::EnvInfo>> {
    Json(model::env_catalog(&state.envs))
}

async fn env_sample(body: Bytes) -> ApiResult<reward_lens::Transition> {
    let req: SampleRequest = parse(&body)?;
    Ok(Json(compute(move || model::sample(&req)).await?))
}

async fn scenario(State(state): State<AppState>, body: Bytes) -> ApiResult<model::ScenarioResponse> {
    let sc: Scenario = parse(&body)?;
    let m = require_model(&state)?;
    Ok(Json(compute(move || model::scenario(&m, &sc)).await?))
}

#[derive(Deserialize)]
struct LoadRequest {
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LoadResponse {
    pub checkpoint: String,
}

async fn model_load(State(state): State<AppState>, body: Bytes) -> ApiResult<LoadResponse> {
    let req: LoadRequest = parse(&body)?;
    let path = paths::resolve(req.path.as_ref());
    let loaded = compute(move || LoadedModel::load(&path)).await?;
    let checkpoint = loaded.checkpoint.clone();
    state.swap(loaded);
    Ok(Json(LoadResponse { checkpoint }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/reward", post(reward))
        .route("/api/saliency/gradient", post(saliency_gradient))
        .route("/api/saliency/occlusion", post(saliency_occlusion))
        .route("/api/envs", get(envs))
        .route("/api/env/sample", post(env_sample))
        .route("/api/scenario", post(scenario))
        .route("/api/model/load", post(model_load))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
