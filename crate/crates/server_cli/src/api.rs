//! JSON HTTP API over a loaded workspace.
//!
//! KB writes are serialized by the `kb` mutex. An enrichment job holds the
//! write lease for its whole run; every mutation endpoint answers 409 while
//! the lease is held. Index rebuilds swap the shared index atomically.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use l2r_core::agents::PromptSet;
use l2r_core::ake::{AkeError, AkeJob, Enricher, JobState, JobStore, ReviewAction};
use l2r_core::config::{AkeSection, AnswerSettings};
use l2r_core::evaluation::{
    check_dataset, evaluate, forced_pass, load_dataset, refusal_success_rate, sweep_alpha,
    sweep_csv, DatasetRecord, EvalError, ForcedCache,
};
use l2r_core::knowledge_store::{ImportMode, KnowledgeBase, KnowledgeEntry, Source, StoreError};
use l2r_core::llm_gateway::Gateway;
use l2r_core::pipeline::{response_json, Pipeline, PipelineError, Task};
use l2r_core::retrieval::{Embedder, EmbeddingCache, IndexHandle, RetrievalError, VectorIndex, CACHE_FILE};

use crate::workspace::Workspace;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    audit_ref: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            audit_ref: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }

    fn locked() -> Self {
        Self::new(StatusCode::CONFLICT, "knowledge base is locked by a running enrichment job")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(r) = self.audit_ref {
            body["audit_ref"] = json!(r);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::DuplicateId(_) => StatusCode::CONFLICT,
            StoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        let status = match e {
            RetrievalError::Provider(_) => StatusCode::BAD_GATEWAY,
            RetrievalError::InvalidK => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::EmptyQuestion | PipelineError::TooFewChoices { .. } | PipelineError::TooManyChoices { .. } => {
                StatusCode::BAD_REQUEST
            }
            PipelineError::Retrieval(RetrievalError::Provider(_)) | PipelineError::Parse { .. } | PipelineError::Gateway(_) => {
                StatusCode::BAD_GATEWAY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            audit_ref: e.audit_ref(),
            message: e.to_string(),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let status = match e {
            EvalError::MissingCache => StatusCode::NOT_FOUND,
            EvalError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl From<AkeError> for ApiError {
    fn from(e: AkeError) -> Self {
        let status = match e {
            AkeError::UnknownEntry(_) => StatusCode::NOT_FOUND,
            AkeError::ReviewConflict { .. } => StatusCode::CONFLICT,
            AkeError::ZeroTarget | AkeError::NoSeeds | AkeError::EmptyQuestion => StatusCode::BAD_REQUEST,
            AkeError::Store(e) => return e.into(),
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

pub struct AppState {
    settings: RwLock<AnswerSettings>,
    kb: Mutex<KnowledgeBase>,
    cache: Mutex<EmbeddingCache>,
    index: IndexHandle<f64>,
    embedder: Arc<dyn Embedder>,
    prompts: Arc<PromptSet>,
    gateway: Arc<Gateway>,
    jobs: Mutex<BTreeMap<String, AkeJob>>,
    job_store: JobStore,
    ake: AkeSection,
    lease: AtomicBool,
    kb_dir: PathBuf,
    forced: Mutex<Option<ForcedCache>>,
    parallelism: usize,
    cors: Vec<String>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("kb_dir", &self.kb_dir).finish()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Held by an enrichment job; released on drop.
struct Lease(Arc<AppState>);

impl Drop for Lease {
    fn drop(&mut self) {
        self.0.lease.store(false, Ordering::SeqCst);
    }
}

impl AppState {
    pub fn new(mut ws: Workspace, gateway: Arc<Gateway>) -> anyhow::Result<Arc<Self>> {
        let (index, _) = ws.build_index()?;
        ws.save_cache()?;
        let jobs = ws.load_jobs()?.into_iter().map(|j| (j.job_id.clone(), j)).collect();
        Ok(Arc::new(Self {
            settings: RwLock::new(ws.settings()),
            index: IndexHandle::new(index),
            embedder: ws.embedder.clone(),
            prompts: ws.prompts.clone(),
            gateway,
            jobs: Mutex::new(jobs),
            job_store: ws.job_store(),
            ake: ws.config.ake.clone(),
            lease: AtomicBool::new(false),
            kb_dir: ws.config.paths.kb_dir.clone(),
            forced: Mutex::new(None),
            parallelism: ws.config.answer.parallelism,
            cors: ws.config.server.cors_allowlist.clone(),
            kb: Mutex::new(ws.kb),
            cache: Mutex::new(ws.cache),
        }))
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn settings(&self) -> AnswerSettings {
        *self.settings.read().unwrap_or_else(|p| p.into_inner())
    }

    fn pipeline(&self, settings: AnswerSettings) -> Pipeline {
        Pipeline::new(self.index.load(), self.gateway.clone(), self.prompts.clone(), settings)
    }

    fn try_lease(self: &Arc<Self>) -> Option<Lease> {
        self.lease
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .ok()
            .map(|_| Lease(self.clone()))
    }

    /// Locks the KB for a mutation, refusing while an enrichment job runs.
    fn kb_for_write(&self) -> ApiResult<MutexGuard<'_, KnowledgeBase>> {
        let kb = lock(&self.kb);
        if self.lease.load(Ordering::SeqCst) {
            return Err(ApiError::locked());
        }
        Ok(kb)
    }

    /// Persists the KB and swaps in a rebuilt index. Call with the KB locked.
    fn commit(&self, kb: &KnowledgeBase) -> ApiResult<()> {
        let mut cache = lock(&self.cache);
        let (index, _) = VectorIndex::build(kb, self.embedder.clone(), &mut cache)?;
        self.index.swap(index);
        kb.save_dir(&self.kb_dir)?;
        cache.save(&self.kb_dir.join(CACHE_FILE))?;
        Ok(())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/ask", post(ask))
        .route("/v1/knowledge", get(list_knowledge).post(add_knowledge))
        .route("/v1/knowledge/import", post(import_knowledge))
        .route("/v1/knowledge/{id}", patch(update_knowledge).delete(delete_knowledge).get(get_knowledge))
        .route("/v1/ake/jobs", get(list_jobs).post(start_job))
        .route("/v1/ake/jobs/{id}", get(get_job))
        .route("/v1/ake/review/{entry_id}", post(review))
        .route("/v1/config", get(get_config).put(put_config))
        .route("/v1/eval/run", post(eval_run))
        .route("/v1/eval/sweep", post(eval_sweep))
        .route("/v1/audit/{call_index}", get(audit))
        .with_state(state.clone());
    let origins: Vec<HeaderValue> = state.cors.iter().filter_map(|o| o.parse().ok()).collect();
    if !origins.is_empty() {
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST, Method::PUT, Method::PATCH, Method::DELETE])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        );
    }
    app
}

async fn healthz(State(s): State<Arc<AppState>>) -> Json<Value> {
    let entries = lock(&s.kb).active_entries().count();
    Json(json!({
        "status": "ok",
        "entries": entries,
        "indexed": s.index.load().len(),
        "provider": s.gateway.provider_name(),
        "enrichment_running": s.lease.load(Ordering::SeqCst),
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AskOverrides {
    alpha: Option<f64>,
    k: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AskRequest {
    question: String,
    #[serde(default)]
    choices: Option<Vec<String>>,
    #[serde(default)]
    task: Option<Task>,
    #[serde(default)]
    overrides: Option<AskOverrides>,
    #[serde(default)]
    forced: bool,
}

async fn ask(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: AskRequest = parse(&body)?;
    let mut settings = s.settings();
    if let Some(o) = &req.overrides {
        settings.alpha = o.alpha.unwrap_or(settings.alpha);
        settings.k = o.k.unwrap_or(settings.k);
    }
    settings.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let task = req
        .task
        .unwrap_or(if req.choices.is_some() { Task::Mc1 } else { Task::Open });
    blocking(move || {
        let p = s.pipeline(settings);
        let choices = req.choices.as_deref();
        let r = if req.forced {
            p.forced_answer(&req.question, choices, task)
        } else {
            p.answer_question(&req.question, choices, task)
        }?;
        let mut out = response_json(&uuid::Uuid::new_v4().to_string(), &r);
        out["question"] = json!(req.question);
        Ok(Json(out))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
struct ListQuery {
    #[serde(default)]
    include_deleted: bool,
}

async fn list_knowledge(State(s): State<Arc<AppState>>, Query(q): Query<ListQuery>) -> Json<Value> {
    let kb = lock(&s.kb);
    let entries: Vec<&KnowledgeEntry> = if q.include_deleted {
        kb.entries().iter().collect()
    } else {
        kb.active_entries().collect()
    };
    Json(json!({ "entries": entries }))
}

async fn get_knowledge(State(s): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<KnowledgeEntry>> {
    let kb = lock(&s.kb);
    kb.get(id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no knowledge entry {id}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewKnowledge {
    text: String,
    #[serde(default = "full_confidence")]
    confidence: f64,
    #[serde(default)]
    verified: bool,
}

fn full_confidence() -> f64 {
    1.0
}

async fn add_knowledge(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<KnowledgeEntry>)> {
    let req: NewKnowledge = parse(&body)?;
    blocking(move || {
        let mut kb = s.kb_for_write()?;
        let entry = kb.upsert_entry(&req.text, req.confidence, Source::Manual, req.verified)?.clone();
        s.commit(&kb)?;
        Ok((StatusCode::CREATED, Json(entry)))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KnowledgePatch {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    confidence: Option<f64>,
}

async fn update_knowledge(
    State(s): State<Arc<AppState>>,
    Path(id): Path<u64>,
    body: Bytes,
) -> ApiResult<Json<KnowledgeEntry>> {
    let req: KnowledgePatch = parse(&body)?;
    if req.text.is_none() && req.confidence.is_none() {
        return Err(ApiError::bad_request("nothing to update: give text and/or confidence"));
    }
    blocking(move || {
        let mut kb = s.kb_for_write()?;
        // Check both before changing either.
        if let Some(c) = req.confidence {
            l2r_core::knowledge_store::check_confidence(c)?;
        }
        if let Some(t) = &req.text {
            l2r_core::knowledge_store::validate_fact(t)?;
        }
        if let Some(t) = &req.text {
            kb.update_text(id, t)?;
        }
        if let Some(c) = req.confidence {
            kb.set_confidence(id, c)?;
        }
        let entry = kb.get(id).cloned().ok_or(StoreError::NotFound(id))?;
        s.commit(&kb)?;
        Ok(Json(entry))
    })
    .await
}

async fn delete_knowledge(State(s): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<KnowledgeEntry>> {
    blocking(move || {
        let mut kb = s.kb_for_write()?;
        let entry = kb.delete(id)?.clone();
        s.commit(&kb)?;
        Ok(Json(entry))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ImportKind {
    KbJsonl,
    Corpus,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportRequest {
    mode: ImportKind,
    content: String,
    #[serde(default = "full_confidence")]
    confidence: f64,
}

async fn import_knowledge(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: ImportRequest = parse(&body)?;
    let mode = match req.mode {
        ImportKind::KbJsonl => ImportMode::KbJsonl,
        ImportKind::Corpus => ImportMode::CorpusText {
            confidence: req.confidence,
        },
    };
    blocking(move || {
        let mut kb = s.kb_for_write()?;
        let n = kb.import_str(&req.content, mode)?;
        s.commit(&kb)?;
        Ok(Json(json!({ "imported": n })))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JobRequest {
    seeds: Vec<String>,
    count: usize,
    #[serde(default)]
    auto_accept: Option<bool>,
}

#[derive(Serialize)]
struct JobSummary<'a> {
    job_id: &'a str,
    state: JobState,
    m_target: usize,
    produced: usize,
    pending: usize,
    errors: usize,
}

async fn list_jobs(State(s): State<Arc<AppState>>) -> Json<Value> {
    let jobs = lock(&s.jobs);
    let summaries: Vec<JobSummary> = jobs
        .values()
        .map(|j| JobSummary {
            job_id: &j.job_id,
            state: j.state,
            m_target: j.m_target,
            produced: j.produced.len(),
            pending: j.pending().count(),
            errors: j.errors.len(),
        })
        .collect();
    Json(json!({ "jobs": summaries }))
}

async fn start_job(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<AkeJob>)> {
    let req: JobRequest = parse(&body)?;
    let seeds: Vec<String> = req.seeds.iter().map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
    if seeds.is_empty() {
        return Err(ApiError::bad_request("seeds must contain at least one question"));
    }
    if req.count == 0 {
        return Err(ApiError::bad_request("count must be >= 1"));
    }
    let lease = s.try_lease().ok_or_else(ApiError::locked)?;
    let job_id = uuid::Uuid::new_v4().to_string();
    let job = AkeJob::new(&job_id, seeds.clone(), req.count);
    s.job_store.append(&job)?;
    lock(&s.jobs).insert(job_id.clone(), job.clone());

    let auto_accept = req.auto_accept.unwrap_or(s.ake.auto_accept);
    let state = s.clone();
    std::thread::spawn(move || {
        let _lease = lease;
        let enricher = Enricher::new(state.gateway.clone(), state.prompts.clone(), state.ake.clone());
        let mut snapshot = lock(&state.kb).clone();
        let job = match enricher.enrich(&mut snapshot, &job_id, &seeds, req.count, auto_accept) {
            Ok(job) => {
                let mut kb = lock(&state.kb);
                *kb = snapshot;
                if let Err(e) = state.commit(&kb) {
                    tracing::error!(error = %e.message, "persisting enrichment results failed");
                }
                job
            }
            Err(e) => {
                let mut job = AkeJob::new(&job_id, seeds, req.count);
                job.state = JobState::Failed;
                job.errors.push(l2r_core::ake::ItemError {
                    stage: "job".into(),
                    item: String::new(),
                    message: e.to_string(),
                });
                job
            }
        };
        if let Err(e) = state.job_store.append(&job) {
            tracing::error!(error = %e, "writing job log failed");
        }
        lock(&state.jobs).insert(job_id, job);
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_job(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<AkeJob>> {
    lock(&s.jobs)
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no job {id}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviewRequest {
    action: ReviewAction,
}

async fn review(State(s): State<Arc<AppState>>, Path(entry_id): Path<u64>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: ReviewRequest = parse(&body)?;
    blocking(move || {
        let mut jobs = lock(&s.jobs);
        let job = jobs
            .values_mut()
            .find(|j| j.has_item(entry_id))
            .ok_or(AkeError::UnknownEntry(entry_id))?;
        let mut kb = s.kb_for_write()?;
        let stored = job.review(&mut kb, entry_id, req.action)?;
        if stored.is_some() {
            s.commit(&kb)?;
        }
        s.job_store.append(job)?;
        let status = job.produced.iter().find(|p| p.entry.id == entry_id).map(|p| p.status);
        Ok(Json(json!({ "entry_id": entry_id, "status": status, "entry": stored })))
    })
    .await
}

async fn get_config(State(s): State<Arc<AppState>>) -> Json<AnswerSettings> {
    Json(s.settings())
}

async fn put_config(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<AnswerSettings>> {
    let new: AnswerSettings = parse(&body)?;
    new.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    if s.lease.load(Ordering::SeqCst) {
        return Err(ApiError::locked());
    }
    *s.settings.write().unwrap_or_else(|p| p.into_inner()) = new;
    Ok(Json(new))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRequest {
    #[serde(default)]
    dataset: Option<Vec<DatasetRecord>>,
    #[serde(default)]
    dataset_path: Option<PathBuf>,
    /// Also run the forced pass and report the refusal success rate.
    #[serde(default)]
    forced: bool,
    #[serde(default)]
    overrides: Option<AskOverrides>,
}

fn dataset_of(inline: Option<Vec<DatasetRecord>>, path: Option<PathBuf>) -> ApiResult<Option<Vec<DatasetRecord>>> {
    match (inline, path) {
        (Some(_), Some(_)) => Err(ApiError::bad_request("give dataset or dataset_path, not both")),
        (Some(d), None) => {
            check_dataset(&d)?;
            Ok(Some(d))
        }
        (None, Some(p)) => Ok(Some(load_dataset(&p)?)),
        (None, None) => Ok(None),
    }
}

async fn eval_run(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: EvalRequest = parse(&body)?;
    let mut settings = s.settings();
    if let Some(o) = &req.overrides {
        settings.alpha = o.alpha.unwrap_or(settings.alpha);
        settings.k = o.k.unwrap_or(settings.k);
    }
    settings.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let dataset = dataset_of(req.dataset, req.dataset_path)?
        .ok_or_else(|| ApiError::bad_request("dataset or dataset_path is required"))?;
    let forced = req.forced;
    blocking(move || {
        let p = s.pipeline(settings);
        let (mut report, _) = evaluate(&dataset, &p, s.parallelism);
        let mut success = None;
        if forced {
            let cache = forced_pass(&dataset, &p, s.parallelism);
            let rate = refusal_success_rate(&report, &cache);
            report.success_rate = rate.rate;
            success = Some(rate);
            *lock(&s.forced) = Some(cache);
        }
        let mut out = serde_json::to_value(&report).map_err(ApiError::internal)?;
        out["success"] = json!(success);
        Ok(Json(out))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepRequest {
    /// Numbers, or the string "inf".
    alphas: Vec<Value>,
    #[serde(default)]
    dataset: Option<Vec<DatasetRecord>>,
    #[serde(default)]
    dataset_path: Option<PathBuf>,
}

fn alpha_of(v: &Value) -> ApiResult<f64> {
    let a = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| ApiError::bad_request(format!("bad alpha {v}")))?;
    if a.is_nan() || a < 0.0 {
        return Err(ApiError::bad_request(format!("alpha must be >= 0, got {v}")));
    }
    Ok(a)
}

async fn eval_sweep(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: SweepRequest = parse(&body)?;
    let alphas = req.alphas.iter().map(alpha_of).collect::<ApiResult<Vec<f64>>>()?;
    if alphas.is_empty() {
        return Err(ApiError::bad_request("alphas must not be empty"));
    }
    let dataset = dataset_of(req.dataset, req.dataset_path)?;
    blocking(move || {
        let cache = match dataset {
            Some(d) => {
                let cache = forced_pass(&d, &s.pipeline(s.settings()), s.parallelism);
                *lock(&s.forced) = Some(cache.clone());
                cache
            }
            None => lock(&s.forced).clone().ok_or(EvalError::MissingCache)?,
        };
        let points = sweep_alpha(&cache, &alphas);
        let questions: Vec<Value> = cache
            .records
            .iter()
            .map(|r| {
                json!({
                    "id": r.id,
                    "min_score": r.min_score,
                    "i_soft": r.i_soft,
                    "correct": r.score.correct,
                    "units": r.score.units,
                })
            })
            .collect();
        Ok(Json(json!({
            "points": points,
            "csv": sweep_csv(&points),
            "questions": questions,
        })))
    })
    .await
}

async fn audit(State(s): State<Arc<AppState>>, Path(call_index): Path<u64>) -> ApiResult<Json<Value>> {
    s.gateway
        .exchange(call_index)
        .map(|x| Json(json!(x)))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no provider call {call_index}")))
}

/// Binds and serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
