//! Shared service state and the axum router.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, SecondsFormat, Utc};
use imi_core::experiment::{
    Experiment, Millis, NextTrial, QualityThresholds, RecruitmentPlan, RecruitmentStatus,
    SessionRecord, TaskKey, TrialPayload,
};
use imi_core::store::{self, ImiResponseRecord, StimulusManifest};
use imi_core::ImiError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::api::{
    AdvanceClock, ClockState, CreateSession, ErrorBody, ExportSummary, SessionCreated,
    SessionFinished, SubmitResponse,
};

/// Where "now" comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClockMode {
    System,
    /// Every session starts at `epoch_ms` and only moves when an admin
    /// advances it. Used by simulations.
    Virtual { epoch_ms: Millis },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub admin_token: String,
    pub clock: ClockMode,
    /// Mixed into stimulus handles so clients cannot recompute them.
    pub handle_salt: String,
    pub thresholds: QualityThresholds,
    pub plan: RecruitmentPlan,
    /// Tasks to open; every task of the manifest when `None`.
    pub tasks: Option<Vec<TaskKey>>,
    pub export_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            admin_token: String::new(),
            clock: ClockMode::System,
            handle_salt: String::new(),
            thresholds: QualityThresholds::default(),
            plan: RecruitmentPlan::default(),
            tasks: None,
            export_dir: None,
        }
    }
}

struct Inner {
    exp: Experiment,
    offsets: HashMap<String, Millis>,
}

pub struct AppState {
    inner: Mutex<Inner>,
    manifest: StimulusManifest,
    images_root: PathBuf,
    handles: BTreeMap<String, String>,
    by_path: HashMap<String, String>,
    admin_token: String,
    clock: ClockMode,
    export_dir: Option<PathBuf>,
}

pub fn stimulus_handle(salt: &str, path: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(path.as_bytes());
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn iso(ms: Millis) -> String {
    DateTime::<Utc>::from_timestamp_millis(ms)
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Millis, true))
        .unwrap_or_else(|| ms.to_string())
}

impl AppState {
    /// Opens every configured task over a prepared stimulus directory
    /// (`manifest.json` plus `images/`).
    pub fn new(manifest: StimulusManifest, images_root: &Path, cfg: ServiceConfig) -> imi_core::Result<Self> {
        if cfg.admin_token.is_empty() {
            return Err(ImiError::Config("admin token must not be empty".into()));
        }
        let mut exp = Experiment::new(cfg.thresholds.clone());
        let tasks: Vec<TaskKey> = match cfg.tasks {
            Some(t) => t,
            None => manifest.tasks().into_iter().collect(),
        };
        if tasks.is_empty() {
            return Err(ImiError::Config("no tasks to serve".into()));
        }
        for key in tasks {
            let stimuli = manifest.task_stimuli(&key)?;
            exp.add_task(key, cfg.plan.clone(), stimuli)?;
        }
        let mut handles = BTreeMap::new();
        let mut by_path = HashMap::new();
        for p in manifest.image_paths() {
            let h = stimulus_handle(&cfg.handle_salt, p);
            handles.insert(h.clone(), p.to_string());
            by_path.insert(p.to_string(), h);
        }
        Ok(Self {
            inner: Mutex::new(Inner {
                exp,
                offsets: HashMap::new(),
            }),
            manifest,
            images_root: images_root.to_path_buf(),
            handles,
            by_path,
            admin_token: cfg.admin_token,
            clock: cfg.clock,
            export_dir: cfg.export_dir,
        })
    }

    /// Reads `dir/manifest.json` and serves images from `dir/images`.
    pub fn from_dir(dir: &Path, cfg: ServiceConfig) -> imi_core::Result<Self> {
        let mpath = dir.join(store::MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| ImiError::io(&mpath, e))?;
        let manifest = store::parse_manifest(&text, &mpath)?;
        Self::new(manifest, &store::images_dir(dir), cfg)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn base_now(&self) -> Millis {
        match self.clock {
            ClockMode::System => Utc::now().timestamp_millis(),
            ClockMode::Virtual { epoch_ms } => epoch_ms,
        }
    }

    fn now_for(&self, inner: &Inner, session_id: &str) -> Millis {
        self.base_now() + inner.offsets.get(session_id).copied().unwrap_or(0)
    }

    pub fn manifest(&self) -> &StimulusManifest {
        &self.manifest
    }

    pub fn records(&self) -> Vec<ImiResponseRecord> {
        self.lock().exp.records()
    }

    pub fn sessions(&self) -> Vec<SessionRecord> {
        self.lock().exp.sessions().to_vec()
    }

    /// Finishes sessions that ran past the duration limit.
    pub fn expire_stale(&self) -> Vec<String> {
        let mut inner = self.lock();
        let base = self.base_now();
        let offsets = inner.offsets.clone();
        inner
            .exp
            .expire_stale(|s| base + offsets.get(&s.session_id).copied().unwrap_or(0))
    }

    fn url(&self, path: &str) -> String {
        match self.by_path.get(path) {
            Some(h) => format!("/stimuli/{h}"),
            None => format!("/stimuli/missing-{}", stimulus_handle("", path)),
        }
    }

    fn public_payload(&self, p: TrialPayload) -> TrialPayload {
        TrialPayload {
            neg_references: p.neg_references.iter().map(|r| self.url(r)).collect(),
            pos_references: p.pos_references.iter().map(|r| self.url(r)).collect(),
            top_query: self.url(&p.top_query),
            bottom_query: self.url(&p.bottom_query),
            ..p
        }
    }

    fn authorize(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let ok = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == self.admin_token);
        if ok {
            Ok(())
        } else {
            Err(ApiError::Unauthorized)
        }
    }
}

pub enum ApiError {
    Core(ImiError),
    Unauthorized,
    BadRequest(String),
}

impl From<ImiError> for ApiError {
    fn from(e: ImiError) -> Self {
        ApiError::Core(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match self {
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token".to_string()),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m),
            ApiError::Core(e) => {
                let (status, code) = match &e {
                    ImiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
                    ImiError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
                    ImiError::Protocol(_) => (StatusCode::CONFLICT, "protocol"),
                    ImiError::State(_) => (StatusCode::CONFLICT, "session_state"),
                    ImiError::RepeatParticipant(_) => (StatusCode::CONFLICT, "repeat_participant"),
                    ImiError::RecruitmentClosed(_) => (StatusCode::GONE, "recruitment_closed"),
                    ImiError::NoCapacity(_) => (StatusCode::SERVICE_UNAVAILABLE, "no_capacity"),
                    _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
                };
                (status, code, e.to_string())
            }
        };
        let body = ErrorBody {
            error: code.to_string(),
            message,
        };
        (status, Json(body)).into_response()
    }
}

type Shared = State<Arc<AppState>>;

async fn create_session(State(app): Shared, Json(req): Json<CreateSession>) -> Result<impl IntoResponse, ApiError> {
    let key = TaskKey::new(req.model_id, req.condition, req.difficulty);
    let now = app.base_now();
    let mut inner = app.lock();
    let s = inner.exp.create_session(&req.participant_id, &key, now)?;
    let body = SessionCreated {
        session_id: s.session_id.clone(),
        state: s.state,
        created_at: iso(s.created_at),
        practice_trials: s.practice_trial_count(),
        main_trials: s.trials.len(),
    };
    log::debug!("admitted {} as session {} for {key}", req.participant_id, body.session_id);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn next_trial(State(app): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<NextTrial>, ApiError> {
    let mut inner = app.lock();
    let now = app.now_for(&inner, &id);
    let next = inner.exp.next_trial(&id, now)?;
    drop(inner);
    Ok(Json(match next {
        NextTrial::Trial(p) => NextTrial::Trial(app.public_payload(p)),
        NextTrial::Done => NextTrial::Done,
    }))
}

async fn submit(
    State(app): Shared,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SubmitResponse>,
) -> Result<impl IntoResponse, ApiError> {
    let mut inner = app.lock();
    let now = app.now_for(&inner, &id);
    let fb = inner
        .exp
        .submit_response(&id, &req.trial_id, req.choice, req.confidence, req.reaction_time_ms, now)?;
    Ok(Json(fb))
}

async fn finish(State(app): Shared, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    let mut inner = app.lock();
    let now = app.now_for(&inner, &id);
    let quality = inner.exp.finish_session(&id, now)?;
    if !quality.passed {
        log::debug!("session {id} failed {:?}", quality.failed_names());
    }
    Ok(Json(SessionFinished {
        session_id: id,
        finished_at: iso(now),
        quality,
    }))
}

async fn stimulus(State(app): Shared, UrlPath(handle): UrlPath<String>) -> Result<Response, ApiError> {
    let path = app
        .handles
        .get(handle.trim_end_matches(".png"))
        .ok_or_else(|| ImiError::NotFound(format!("stimulus {handle}")))?;
    let file = app.images_root.join(path);
    let bytes = tokio::fs::read(&file).await.map_err(|e| ImiError::io(&file, e))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    model_id: Option<String>,
    condition: Option<String>,
    difficulty: Option<String>,
}

async fn recruitment(
    State(app): Shared,
    headers: HeaderMap,
    Query(q): Query<TaskQuery>,
) -> Result<Json<Vec<RecruitmentStatus>>, ApiError> {
    app.authorize(&headers)?;
    let inner = app.lock();
    let mut out = Vec::new();
    for key in inner.exp.tasks() {
        let keep = q.model_id.as_deref().is_none_or(|m| m == key.model_id)
            && q.condition.as_deref().is_none_or(|c| c == key.condition.as_str())
            && q.difficulty.as_deref().is_none_or(|d| d == key.difficulty.as_str());
        if keep {
            out.push(inner.exp.recruitment_status(key)?);
        }
    }
    if out.is_empty() {
        return Err(ImiError::NotFound("no task matches the query".into()).into());
    }
    Ok(Json(out))
}

async fn records(State(app): Shared, headers: HeaderMap) -> Result<Json<Vec<ImiResponseRecord>>, ApiError> {
    app.authorize(&headers)?;
    Ok(Json(app.records()))
}

async fn sessions(State(app): Shared, headers: HeaderMap) -> Result<Json<Vec<SessionRecord>>, ApiError> {
    app.authorize(&headers)?;
    Ok(Json(app.sessions()))
}

async fn export(State(app): Shared, headers: HeaderMap) -> Result<Json<ExportSummary>, ApiError> {
    app.authorize(&headers)?;
    let dir = app
        .export_dir
        .clone()
        .ok_or_else(|| ApiError::BadRequest("no export directory configured".into()))?;
    let records = app.records();
    let app2 = app.clone();
    let dir2 = dir.clone();
    let recs = records.clone();
    tokio::task::spawn_blocking(move || store::write_dataset(&recs, &app2.manifest, &app2.images_root, &dir2))
        .await
        .map_err(|e| ApiError::BadRequest(e.to_string()))??;
    let part = store::partition_quality(&records);
    Ok(Json(ExportSummary {
        dir: dir.display().to_string(),
        records: records.len(),
        main: part.main.len(),
        development: part.development.len(),
    }))
}

async fn advance_clock(
    State(app): Shared,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<AdvanceClock>,
) -> Result<Json<ClockState>, ApiError> {
    app.authorize(&headers)?;
    if app.clock == ClockMode::System {
        return Err(ImiError::State("the service runs on the system clock".into()).into());
    }
    if req.advance_ms < 0 {
        return Err(ImiError::Validation("the clock only moves forward".into()).into());
    }
    let mut inner = app.lock();
    inner.exp.session(&id)?;
    let offset = inner.offsets.entry(id.clone()).or_insert(0);
    *offset += req.advance_ms;
    let offset_ms = *offset;
    let now = app.now_for(&inner, &id);
    Ok(Json(ClockState {
        session_id: id,
        now: iso(now),
        offset_ms,
    }))
}

async fn handles(State(app): Shared, headers: HeaderMap) -> Result<Json<BTreeMap<String, String>>, ApiError> {
    app.authorize(&headers)?;
    Ok(Json(app.handles.clone()))
}

async fn expire(State(app): Shared, headers: HeaderMap) -> Result<Json<Vec<String>>, ApiError> {
    app.authorize(&headers)?;
    Ok(Json(app.expire_stale()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/trial", get(next_trial))
        .route("/sessions/{id}/responses", post(submit))
        .route("/sessions/{id}/finish", post(finish))
        .route("/stimuli/{handle}", get(stimulus))
        .route("/admin/recruitment", get(recruitment))
        .route("/admin/records", get(records))
        .route("/admin/sessions", get(sessions))
        .route("/admin/export", post(export))
        .route("/admin/sessions/{id}/clock", post(advance_clock))
        .route("/admin/stimuli", get(handles))
        .route("/admin/expire", post(expire))
        .with_state(state)
}

/// Serves until ctrl-c, expiring stale sessions every `sweep`.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>, sweep: Duration) -> std::io::Result<()> {
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(sweep);
        loop {
            tick.tick().await;
            let expired = sweeper.expire_stale();
            if !expired.is_empty() {
                log::info!("expired {} stale sessions", expired.len());
            }
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
