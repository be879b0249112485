//! Local HTTP service over a directory of checkpoints.
//!
//! Inference runs on a blocking thread. Requests that finish inside the
//! latency budget answer directly; slower ones answer `202` with a job record
//! and keep running, and their motions are fetched by id once done.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use anyhow::{bail, Context};
use axum::extract::{FromRequest, Path as UrlPath, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use oneshot_motion::apps::{self, MaskSpec, RoiPlacement, DEFAULT_COMPOSE_LEVEL};
use oneshot_motion::motion::{MotionJson, MotionTensor};
use oneshot_motion::network::{load_checkpoint_file, save_checkpoint_file, Noise, PyramidModel};
use oneshot_motion::training::{train_all_with_progress, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::io::{motion_from_json, motion_id, motion_json, TrainingLock};

pub const MODEL_DIR_ENV: &str = "ONESHOT_MODEL_DIR";
const CHECKPOINT_EXT: &str = "ckpt";
const MOTION_CACHE_LIMIT: usize = 4096;
const MAX_FRAMES: usize = 10_000;
const MAX_CROWD: usize = 256;
const LOG_TAIL: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub model_dir: PathBuf,
    pub host: String,
    pub port: u16,
    /// Inference slower than this is handed off to a background job.
    pub latency_budget_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            model_dir: std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("models")),
            host: "127.0.0.1".into(),
            port: 7860,
            latency_budget_ms: 200,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("invalid service config")
    }
}

/// Error body sent for every failed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                detail: Value::Null,
            },
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} {id:?}")).with_detail(json!({ what: id }))
    }

    fn invalid(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<oneshot_motion::Error> for ApiError {
    fn from(e: oneshot_motion::Error) -> Self {
        use oneshot_motion::Error as E;
        match &e {
            E::Argument(_) | E::Structural(_) | E::Degenerate(_) | E::Parse { .. } | E::Json(_) => ApiError::invalid(e.to_string()),
            E::State(_) => ApiError::new(StatusCode::CONFLICT, "not_ready", e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body extractor whose rejections use the structured error body.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(rej) => Err(ApiError::new(rej.status(), "invalid_body", rej.body_text())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Generate,
    Compose,
    Evaluate,
    Analyze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    fn is_final(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    pub artifacts: Vec<String>,
    pub log_tail: Vec<String>,
}

impl JobRecord {
    /// Move to `to` if that is forward; final states never change.
    pub fn advance(&mut self, to: JobStatus) -> bool {
        if self.status.is_final() || to <= self.status {
            return false;
        }
        self.status = to;
        if to == JobStatus::Done {
            self.progress = 1.0;
        }
        true
    }

    fn log(&mut self, line: impl Into<String>) {
        self.log_tail.push(line.into());
        if self.log_tail.len() > LOG_TAIL {
            self.log_tail.remove(0);
        }
    }
}

#[derive(Default)]
struct JobStore {
    next: u64,
    records: BTreeMap<String, JobRecord>,
}

#[derive(Default)]
struct MotionCache {
    order: VecDeque<String>,
    items: HashMap<String, Arc<MotionJson>>,
}

impl MotionCache {
    fn insert(&mut self, id: String, m: Arc<MotionJson>) {
        if self.items.insert(id.clone(), m).is_none() {
            self.order.push_back(id);
            while self.order.len() > MOTION_CACHE_LIMIT {
                if let Some(old) = self.order.pop_front() {
                    self.items.remove(&old);
                }
            }
        }
    }
}

pub struct AppState {
    config: ServiceConfig,
    models: RwLock<BTreeMap<String, Arc<PyramidModel>>>,
    motions: Mutex<MotionCache>,
    jobs: Mutex<JobStore>,
    /// Id of the job currently training, if any.
    training: Mutex<Option<String>>,
}

type Shared = Arc<AppState>;

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_'))
}

impl AppState {
    /// State over `config.model_dir`, loading every checkpoint found there.
    pub fn new(config: ServiceConfig) -> anyhow::Result<Shared> {
        if !config.model_dir.is_dir() {
            bail!("checkpoint directory {} does not exist", config.model_dir.display());
        }
        let mut models = BTreeMap::new();
        for entry in fs::read_dir(&config.model_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(CHECKPOINT_EXT) {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|s| valid_id(s)).map(str::to_string) else {
                continue;
            };
            let model = load_checkpoint_file(&path).with_context(|| format!("loading {}", path.display()))?;
            models.insert(id, Arc::new(model));
        }
        Ok(Arc::new(AppState {
            config,
            models: RwLock::new(models),
            motions: Mutex::new(MotionCache::default()),
            jobs: Mutex::new(JobStore::default()),
            training: Mutex::new(None),
        }))
    }

    fn model(&self, id: &str) -> ApiResult<Arc<PyramidModel>> {
        if !valid_id(id) {
            return Err(ApiError::not_found("model", id));
        }
        self.models.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("model", id))
    }

    fn store_motion(&self, t: &MotionTensor) -> ApiResult<(String, Arc<MotionJson>)> {
        let j = Arc::new(motion_json(t).map_err(|e| ApiError::internal(format!("{e:#}")))?);
        let id = motion_id(&j);
        self.motions.lock().unwrap().insert(id.clone(), j.clone());
        Ok((id, j))
    }

    fn motion(&self, id: &str) -> ApiResult<Arc<MotionJson>> {
        self.motions.lock().unwrap().items.get(id).cloned().ok_or_else(|| ApiError::not_found("motion", id))
    }

    fn resolve(&self, src: &MotionSource) -> ApiResult<MotionTensor> {
        match src {
            MotionSource::Stored { motion_id } => Ok(motion_from_json(&*self.motion(motion_id)?)?),
            MotionSource::Inline(j) => Ok(motion_from_json(j)?),
        }
    }

    fn new_job(&self, kind: JobKind, status: JobStatus) -> JobRecord {
        let mut jobs = self.jobs.lock().unwrap();
        jobs.next += 1;
        let rec = JobRecord {
            id: format!("job-{}", jobs.next),
            kind,
            status,
            progress: 0.0,
            artifacts: Vec::new(),
            log_tail: Vec::new(),
        };
        jobs.records.insert(rec.id.clone(), rec.clone());
        rec
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        if let Some(r) = self.jobs.lock().unwrap().records.get_mut(id) {
            f(r);
        }
    }

    fn job(&self, id: &str) -> ApiResult<JobRecord> {
        self.jobs.lock().unwrap().records.get(id).cloned().ok_or_else(|| ApiError::not_found("job", id))
    }
}

/// A motion given inline as MotionJSON or by the id of a stored result.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MotionSource {
    Stored { motion_id: String },
    Inline(MotionJson),
}

#[derive(Debug, Deserialize)]
pub struct GenerateRequest {
    pub model: String,
    #[serde(default)]
    pub seed: u64,
    pub frames: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct BodyPartRequest {
    pub model: String,
    #[serde(default)]
    pub mask: MaskSpec,
    pub level: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the model's reconstruction of its training clip.
    pub reference: Option<MotionSource>,
}

#[derive(Debug, Deserialize)]
pub struct InpaintRequest {
    pub model: String,
    pub frame_mask: MaskSpec,
    #[serde(default)]
    pub seed: u64,
    pub reference: Option<MotionSource>,
}

#[derive(Debug, Deserialize)]
pub struct PlacementRequest {
    /// Defaults to the model's reconstruction of its training clip.
    pub source: Option<MotionSource>,
    pub roi: (usize, usize),
    pub target_start: usize,
}

#[derive(Debug, Deserialize)]
pub struct RoiRequest {
    pub model: String,
    #[serde(default)]
    pub placements: Vec<PlacementRequest>,
    pub frames: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
pub struct RestyleRequest {
    pub style_model: String,
    pub content_motion: MotionSource,
    /// Without a seed the upper stages run noise-free.
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
pub struct CrowdRequest {
    pub model: String,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    pub frames: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct TrainRequest {
    /// Id the checkpoint is saved under.
    pub model: String,
    pub input: MotionSource,
    pub preset: Option<String>,
    /// Full configuration; replaces the preset.
    pub config: Option<TrainConfig>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct ModelInfo {
    pub id: String,
    pub preset: String,
    pub seed: u64,
    pub trained: bool,
    pub frames: usize,
    pub frame_rate: f64,
    pub stages: usize,
    pub levels: usize,
    pub stage_lengths: Vec<usize>,
    pub joints: Vec<String>,
    pub feature_dim: usize,
}

fn model_info(id: &str, m: &PyramidModel) -> ModelInfo {
    ModelInfo {
        id: id.to_string(),
        preset: m.metadata.preset.clone(),
        seed: m.metadata.seed,
        trained: m.is_trained(),
        frames: m.pyramid.total_frames(),
        frame_rate: m.frame_rate,
        stages: m.num_stages(),
        levels: m.pyramid.num_levels(),
        stage_lengths: m.pyramid.stage_lengths.clone(),
        joints: m.topology.joint_names.clone(),
        feature_dim: m.feature_dim(),
    }
}

fn check_frames(frames: Option<usize>) -> ApiResult<()> {
    match frames {
        Some(f) if f > MAX_FRAMES => Err(ApiError::invalid(format!("at most {MAX_FRAMES} frames per request"))),
        _ => Ok(()),
    }
}

fn reference_or_reconstruction(state: &AppState, model: &PyramidModel, src: Option<&MotionSource>) -> ApiResult<MotionTensor> {
    match src {
        Some(s) => state.resolve(s),
        None => Ok(model.generate_full(&Noise::Reconstruction, None)?),
    }
}

enum Shape {
    Single,
    Many,
}

type Work = Box<dyn FnOnce() -> ApiResult<Vec<MotionTensor>> + Send>;

/// Run `work` on a blocking thread; answer with its motions inside the
/// latency budget, or with a job record otherwise.
async fn infer(state: Shared, kind: JobKind, shape: Shape, work: Work) -> ApiResult<Response> {
    let st = state.clone();
    let mut handle = tokio::task::spawn_blocking(move || -> ApiResult<Vec<(String, Arc<MotionJson>)>> {
        work()?.iter().map(|t| st.store_motion(t)).collect()
    });
    let budget = Duration::from_millis(state.config.latency_budget_ms);
    // A zero budget always hands off, even if the work happens to finish at once.
    let waited = if budget.is_zero() { None } else { tokio::time::timeout(budget, &mut handle).await.ok() };
    let stored = match waited {
        Some(joined) => joined.map_err(|e| ApiError::internal(e.to_string()))??,
        None => {
            let rec = state.new_job(kind, JobStatus::Running);
            let id = rec.id.clone();
            tokio::spawn(async move {
                let result = handle.await;
                state.update_job(&id, |r| match result {
                    Ok(Ok(stored)) => {
                        r.artifacts = stored.iter().map(|(m, _)| format!("/motions/{m}")).collect();
                        r.advance(JobStatus::Done);
                    }
                    Ok(Err(e)) => {
                        r.log(e.body.message);
                        r.advance(JobStatus::Failed);
                    }
                    Err(e) => {
                        r.log(e.to_string());
                        r.advance(JobStatus::Failed);
                    }
                });
            });
            return Ok((StatusCode::ACCEPTED, Json(rec)).into_response());
        }
    };
    let body = match shape {
        Shape::Single => {
            let (id, m) = stored.into_iter().next().ok_or_else(|| ApiError::internal("no motion produced"))?;
            json!({"motion_id": id, "motion": *m})
        }
        Shape::Many => {
            let (ids, ms): (Vec<_>, Vec<_>) = stored.into_iter().unzip();
            let ms: Vec<&MotionJson> = ms.iter().map(|m| m.as_ref()).collect();
            json!({"motion_ids": ids, "motions": ms})
        }
    };
    Ok(Json(body).into_response())
}

async fn list_models(State(state): State<Shared>) -> Json<Vec<ModelInfo>> {
    let models = state.models.read().unwrap();
    Json(models.iter().map(|(id, m)| model_info(id, m)).collect())
}

async fn get_model(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ModelInfo>> {
    let m = state.model(&id)?;
    Ok(Json(model_info(&id, &m)))
}

async fn generate(State(state): State<Shared>, ApiJson(req): ApiJson<GenerateRequest>) -> ApiResult<Response> {
    let model = state.model(&req.model)?;
    check_frames(req.frames)?;
    let work: Work = Box::new(move || Ok(vec![model.generate_full(&Noise::Seed(req.seed), req.frames)?]));
    infer(state, JobKind::Generate, Shape::Single, work).await
}

async fn compose_bodypart(State(state): State<Shared>, ApiJson(req): ApiJson<BodyPartRequest>) -> ApiResult<Response> {
    let model = state.model(&req.model)?;
    let mask = req.mask.joint_mask(&model.topology)?;
    let reference = reference_or_reconstruction(&state, &model, req.reference.as_ref())?;
    let level = req.level.unwrap_or(DEFAULT_COMPOSE_LEVEL);
    let work: Work = Box::new(move || Ok(vec![apps::body_part_compose(&model, &reference, &mask, level, req.seed)?]));
    infer(state, JobKind::Compose, Shape::Single, work).await
}

async fn compose_inpaint(State(state): State<Shared>, ApiJson(req): ApiJson<InpaintRequest>) -> ApiResult<Response> {
    let model = state.model(&req.model)?;
    let reference = reference_or_reconstruction(&state, &model, req.reference.as_ref())?;
    let frames = req.frame_mask.frame_mask(reference.frames())?;
    let work: Work = Box::new(move || Ok(vec![apps::inpaint(&model, &reference, &frames, req.seed)?]));
    infer(state, JobKind::Compose, Shape::Single, work).await
}

async fn compose_roi(State(state): State<Shared>, ApiJson(req): ApiJson<RoiRequest>) -> ApiResult<Response> {
    let model = state.model(&req.model)?;
    check_frames(req.frames)?;
    let total = req.frames.unwrap_or_else(|| model.pyramid.total_frames());
    let mut placements = Vec::with_capacity(req.placements.len());
    for p in &req.placements {
        placements.push(RoiPlacement {
            source: reference_or_reconstruction(&state, &model, p.source.as_ref())?,
            roi: p.roi,
            target_start: p.target_start,
        });
    }
    let work: Work = Box::new(move || Ok(vec![apps::place_rois(&model, &placements, total, req.seed)?]));
    infer(state, JobKind::Compose, Shape::Single, work).await
}

async fn restyle(State(state): State<Shared>, ApiJson(req): ApiJson<RestyleRequest>) -> ApiResult<Response> {
    let model = state.model(&req.style_model)?;
    let content = state.resolve(&req.content_motion)?;
    check_frames(Some(content.frames()))?;
    let noise = req.seed.map(Noise::Seed).unwrap_or(Noise::Zero);
    let work: Work = Box::new(move || Ok(vec![apps::restyle(&model, &content, &noise)?]));
    infer(state, JobKind::Compose, Shape::Single, work).await
}

async fn crowd(State(state): State<Shared>, ApiJson(req): ApiJson<CrowdRequest>) -> ApiResult<Response> {
    let model = state.model(&req.model)?;
    check_frames(req.frames)?;
    if req.n == 0 || req.n > MAX_CROWD {
        return Err(ApiError::invalid(format!("crowd size must lie in 1..={MAX_CROWD}")));
    }
    let work: Work = Box::new(move || Ok(apps::crowd(&model, req.n, req.seed, req.frames)?));
    infer(state, JobKind::Generate, Shape::Many, work).await
}

async fn get_job(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<JobRecord>> {
    Ok(Json(state.job(&id)?))
}

async fn get_motion(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<MotionJson>> {
    Ok(Json(state.motion(&id)?.as_ref().clone()))
}

/// Releases the service-wide training slot when dropped.
struct TrainingSlot(Shared);

impl Drop for TrainingSlot {
    fn drop(&mut self) {
        *self.0.training.lock().unwrap() = None;
    }
}

async fn train(State(state): State<Shared>, ApiJson(req): ApiJson<TrainRequest>) -> ApiResult<Response> {
    if !valid_id(&req.model) {
        return Err(ApiError::invalid("model ids use letters, digits, '-' and '_'"));
    }
    let input = state.resolve(&req.input)?;
    let mut cfg = match (req.config, req.preset.as_deref()) {
        (Some(c), _) => {
            c.validate()?;
            c
        }
        (None, p) => TrainConfig::preset(p.unwrap_or("abl9"))?,
    };
    if let Some(s) = req.seed {
        cfg.seed = s;
    }
    let busy = |holder: &str| {
        ApiError::new(StatusCode::CONFLICT, "training_locked", "a training job is already running").with_detail(json!({"holder": holder}))
    };
    let rec = {
        let mut slot = state.training.lock().unwrap();
        if let Some(j) = slot.as_ref() {
            return Err(busy(j));
        }
        let lock = TrainingLock::acquire(&state.config.model_dir).map_err(|e| busy(&format!("{e:#}")))?;
        let rec = state.new_job(JobKind::Train, JobStatus::Queued);
        *slot = Some(rec.id.clone());
        let st = state.clone();
        let job = rec.id.clone();
        let model_id = req.model.clone();
        tokio::task::spawn_blocking(move || {
            let _slot = TrainingSlot(st.clone());
            let _lock = lock;
            st.update_job(&job, |r| {
                r.advance(JobStatus::Running);
            });
            let result = train_all_with_progress(&input, &cfg, |done, total| {
                st.update_job(&job, |r| {
                    r.progress = done as f64 / total.max(1) as f64;
                    r.log(format!("trained {done}/{total} iterations"));
                })
            })
            .and_then(|(model, _)| {
                save_checkpoint_file(&model, st.config.model_dir.join(format!("{model_id}.{CHECKPOINT_EXT}")))?;
                Ok(model)
            });
            match result {
                Ok(model) => {
                    st.models.write().unwrap().insert(model_id.clone(), Arc::new(model));
                    st.update_job(&job, |r| {
                        r.artifacts = vec![format!("/models/{model_id}")];
                        r.advance(JobStatus::Done);
                    });
                }
                Err(e) => st.update_job(&job, |r| {
                    r.log(e.to_string());
                    r.advance(JobStatus::Failed);
                }),
            }
        });
        rec
    };
    Ok((StatusCode::ACCEPTED, Json(rec)).into_response())
}

async fn no_route() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn bad_method() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/models", get(list_models))
        .route("/models/{id}", get(get_model))
        .route("/generate", post(generate))
        .route("/compose/bodypart", post(compose_bodypart))
        .route("/compose/inpaint", post(compose_inpaint))
        .route("/compose/roi", post(compose_roi))
        .route("/restyle", post(restyle))
        .route("/crowd", post(crowd))
        .route("/train", post(train))
        .route("/jobs/{id}", get(get_job))
        .route("/motions/{id}", get(get_motion))
        .fallback(no_route)
        .method_not_allowed_fallback(bad_method)
        .with_state(state)
}

pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let state = AppState::new(cfg)?;
    let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("serving {} models on http://{addr}", state.models.read().unwrap().len());
    axum::serve(listener, router(state)).await?;
    Ok(())
}
