//! HTTP API over review sessions, corpus statistics and scoring.
//!
//! Session mutations are serialized per session behind an async mutex that
//! also caches the loaded state; different sessions proceed in parallel, and
//! language-model calls run on the blocking pool under a concurrency cap.

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, Semaphore};

use parley_core::corpus::{compute_stats, Corpus, CorpusError};
use parley_core::document::DialogueDocument;
use parley_core::metrics::{evaluate_corpus, render_table, EvalError, Predictions};
use parley_core::ontology::Ontology;
use parley_core::prompt::ScenarioSpec;
use parley_core::state::Resolution;
use parley_session::{
    valid_id, Action, AnnotateRequest, Orchestrator, Reply, Session, SessionConfig, SessionError, SessionEvent,
    SessionStore, StoreError,
};

/// Error body: `{"code", "message", "details"?}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Option<Value>,
}

/// HTTP status for each machine code. Codes not listed are server errors.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "invalid_body" | "invalid_session_id" => StatusCode::BAD_REQUEST,
        "not_found" | "session_not_found" | "unknown_turn" | "corpus_not_found" => StatusCode::NOT_FOUND,
        "conflict" | "wrong_phase" | "no_proposal" | "empty_subdialogue" | "turn_not_in_proposal"
        | "proposal_frozen" | "conflict_pending" | "no_conflict" | "stale_conflict" | "nothing_to_undo"
        | "ending_not_accepted" | "stale_seq" | "event_sequence" | "session_exists" | "annotation_disabled" => {
            StatusCode::CONFLICT
        }
        "empty_text" | "empty_story" | "empty_instruction" | "turn_numbering" | "invalid_offsets" | "blank_span"
        | "annotation_order" | "invalid_triplet" | "state_error" | "invalid_scenario" | "prompt_error"
        | "invalid_predictions" | "invalid_corpus" => StatusCode::UNPROCESSABLE_ENTITY,
        "backend_error" | "generation_failed" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl ApiError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: status_for(code),
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    fn internal(message: impl ToString) -> Self {
        ApiError::new("internal", message.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        ApiError::new("invalid_predictions", e.to_string())
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        let code = match &e {
            CorpusError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "corpus_not_found",
            e if e.is_io() => "corpus_io",
            _ => "invalid_corpus",
        };
        ApiError::new(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Shared service state.
pub struct AppState {
    store: SessionStore,
    orch: Orchestrator,
    corpora: Option<PathBuf>,
    sessions: std::sync::Mutex<HashMap<String, Arc<Mutex<Option<Session>>>>>,
    lm_slots: Arc<Semaphore>,
}

impl AppState {
    /// `corpora` is the directory served by `/corpora/{id}/stats`;
    /// `lm_concurrency` caps simultaneous language-model calls.
    pub fn new(store: SessionStore, orch: Orchestrator, corpora: Option<PathBuf>, lm_concurrency: usize) -> Self {
        AppState {
            store,
            orch,
            corpora,
            sessions: std::sync::Mutex::new(HashMap::new()),
            lm_slots: Arc::new(Semaphore::new(lm_concurrency.max(1))),
        }
    }

    fn slot(&self, id: &str) -> Arc<Mutex<Option<Session>>> {
        let mut map = self.sessions.lock().expect("session map lock");
        map.entry(id.to_string()).or_default().clone()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let raw: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(raw).map_err(|e| {
        ApiError::new("invalid_body", e.to_string()).with_details(json!({ "line": e.line(), "column": e.column() }))
    })
}

fn checked_id(id: &str) -> ApiResult<&str> {
    if valid_id(id) {
        Ok(id)
    } else {
        Err(StoreError::BadId(id.to_string()).into())
    }
}

/// `"name:verb"` into its two parts.
fn split_verb(segment: &str) -> ApiResult<(&str, &str)> {
    segment
        .split_once(':')
        .ok_or_else(|| ApiError::new("not_found", format!("no route for {segment:?}")))
}

async fn load_into(state: &Arc<AppState>, id: &str, cached: &mut Option<Session>) -> ApiResult<Session> {
    if let Some(s) = cached {
        return Ok(s.clone());
    }
    let st = state.clone();
    let owned = id.to_string();
    let session = blocking(move || st.store.load(&owned)).await??;
    *cached = Some(session.clone());
    Ok(session)
}

async fn read_session(state: &Arc<AppState>, id: &str) -> ApiResult<Session> {
    let slot = state.slot(checked_id(id)?);
    let mut guard = slot.lock().await;
    load_into(state, id, &mut guard).await
}

#[derive(Debug, Serialize)]
struct MutationBody {
    seq: u64,
    events: Vec<&'static str>,
    reply: Reply,
    session: Session,
}

/// Perform `action` on session `id` and persist its events.
async fn mutate(state: &Arc<AppState>, id: &str, expected_seq: Option<u64>, action: Action) -> ApiResult<Response> {
    let slot = state.slot(checked_id(id)?);
    let mut guard = slot.lock().await;
    let mut session = load_into(state, id, &mut guard).await?;
    if let Some(expected) = expected_seq {
        if expected != session.next_seq {
            return Err(SessionError::StaleSeq {
                expected,
                found: session.next_seq,
            }
            .into());
        }
    }
    let _permit = if action.uses_lm() {
        Some(state.lm_slots.clone().acquire_owned().await.map_err(ApiError::internal)?)
    } else {
        None
    };
    let st = state.clone();
    let (session, outcome) = blocking(move || {
        let outcome = st.orch.perform(&mut session, &action).map_err(ApiError::from).and_then(|out| {
            st.store.append(&session, &out.events)?;
            Ok(out)
        });
        (session, outcome)
    })
    .await?;
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            if e.code.starts_with("store_") {
                // The log may hold part of the events; reload from disk next time.
                *guard = None;
            }
            return Err(e);
        }
    };
    *guard = Some(session.clone());
    let seq = session.next_seq;
    match outcome.reply {
        Reply::Conflict(prompt) => Err(ApiError::new(
            "conflict",
            format!(
                "{}/{}/{} already has a value; resolve with update, keep or concat",
                prompt.referent, prompt.domain, prompt.slot
            ),
        )
        .with_details(json!({ "seq": seq, "conflict": prompt }))),
        Reply::GenerationFailed(failure) => Err(ApiError::new("generation_failed", failure.message.clone())
            .with_details(json!({ "seq": seq, "raw_text": failure.raw_text }))),
        reply => Ok(Json(MutationBody {
            seq,
            events: outcome.events.iter().map(|e: &SessionEvent| e.kind.name()).collect(),
            reply,
            session,
        })
        .into_response()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    #[serde(default)]
    id: Option<String>,
    scenario: ScenarioSpec,
    #[serde(default)]
    config: SessionConfig,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateBody = parse(&body)?;
    let st = state.clone();
    let session = blocking(move || -> ApiResult<Session> {
        let id = match req.id {
            Some(id) => checked_id(&id)?.to_string(),
            None => st.store.allocate_id()?,
        };
        let (session, created) = st.orch.create(id, req.scenario, req.config)?;
        st.store.create(&session, &created)?;
        Ok(session)
    })
    .await??;
    *state.slot(&session.id).lock().await = Some(session.clone());
    let body = json!({ "id": session.id, "seq": session.next_seq, "session": session });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let st = state.clone();
    let ids = blocking(move || st.store.list()).await??;
    Ok(Json(json!({ "sessions": ids })))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(read_session(&state, &id).await?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeqBody {
    #[serde(default)]
    expected_seq: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoryBody {
    #[serde(default)]
    story: Option<String>,
    #[serde(default)]
    expected_seq: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompleteBody {
    #[serde(default)]
    force: bool,
    #[serde(default)]
    expected_seq: Option<u64>,
}

/// `POST /sessions/{id}:verb`.
async fn session_verb(
    State(state): State<Arc<AppState>>,
    Path(segment): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let (id, verb) = split_verb(&segment)?;
    let (expected, action) = match verb {
        "commit" => (parse::<SeqBody>(&body)?.expected_seq, Action::Commit),
        "complete" => {
            let b: CompleteBody = parse(&body)?;
            (b.expected_seq, Action::Complete { force: b.force })
        }
        "story" => {
            let b: StoryBody = parse(&body)?;
            let action = match b.story {
                Some(story) => Action::SetStory { story },
                None => Action::GenerateStory,
            };
            (b.expected_seq, action)
        }
        "accept-ending" => (parse::<SeqBody>(&body)?.expected_seq, Action::AcceptEnding),
        "reject-ending" => (parse::<SeqBody>(&body)?.expected_seq, Action::RejectEnding),
        "undo-annotation" => (parse::<SeqBody>(&body)?.expected_seq, Action::RemoveLastAnnotation),
        other => return Err(ApiError::new("not_found", format!("unknown session action {other:?}"))),
    };
    mutate(&state, id, expected, action).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposeBody {
    #[serde(default)]
    instruction: Option<String>,
    #[serde(default)]
    expected_seq: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegenerateBody {
    #[serde(default)]
    from_turn: Option<usize>,
    #[serde(default)]
    instruction: Option<String>,
    #[serde(default)]
    expected_seq: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct AnnotateBody {
    #[serde(flatten)]
    request: AnnotateRequest,
    #[serde(default)]
    expected_seq: Option<u64>,
}

/// `POST /sessions/{id}/{op}`.
async fn session_op(
    State(state): State<Arc<AppState>>,
    Path((id, op)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let (expected, action) = match op.as_str() {
        "subdialogue:propose" => {
            let b: ProposeBody = parse(&body)?;
            (b.expected_seq, Action::Propose { instruction: b.instruction })
        }
        "subdialogue:regenerate" => {
            let b: RegenerateBody = parse(&body)?;
            (
                b.expected_seq,
                Action::Regenerate {
                    from_turn: b.from_turn,
                    instruction: b.instruction,
                },
            )
        }
        "annotations" => {
            let b: AnnotateBody = parse(&body)?;
            (b.expected_seq, Action::Annotate(b.request))
        }
        other => return Err(ApiError::new("not_found", format!("unknown session resource {other:?}"))),
    };
    mutate(&state, &id, expected, action).await
}

/// `GET /sessions/{id}/state`: the running cumulative belief.
async fn session_get_op(
    State(state): State<Arc<AppState>>,
    Path((id, op)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    if op != "state" {
        return Err(ApiError::new("not_found", format!("unknown session resource {op:?}")));
    }
    let s = read_session(&state, &id).await?;
    Ok(Json(json!({
        "seq": s.next_seq,
        "phase": s.phase,
        "running_cb": s.running_cb,
        "pending_conflict": s.pending_conflict,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditBody {
    text: String,
    expected_seq: u64,
}

async fn edit_turn(
    State(state): State<Arc<AppState>>,
    Path((id, n)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let turn_index = turn_number(&n)?;
    let b: EditBody = parse(&body)?;
    mutate(&state, &id, Some(b.expected_seq), Action::EditTurn { turn_index, text: b.text }).await
}

async fn delete_turn(
    State(state): State<Arc<AppState>>,
    Path((id, n)): Path<(String, String)>,
    RawQuery(query): RawQuery,
) -> ApiResult<Response> {
    let turn_index = turn_number(&n)?;
    let mut expected = None;
    for pair in query.as_deref().unwrap_or("").split('&').filter(|p| !p.is_empty()) {
        match pair.split_once('=') {
            Some(("expected_seq", v)) => {
                expected = Some(
                    v.parse()
                        .map_err(|_| ApiError::new("invalid_body", format!("expected_seq {v:?} is not a number")))?,
                )
            }
            _ => return Err(ApiError::new("invalid_body", format!("unknown query parameter {pair:?}"))),
        }
    }
    mutate(&state, &id, expected, Action::DeleteTurn { turn_index }).await
}

fn turn_number(n: &str) -> ApiResult<usize> {
    n.parse()
        .map_err(|_| ApiError::new("invalid_body", format!("turn {n:?} is not a number")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveBody {
    resolution: Resolution,
    #[serde(default)]
    prior: Option<String>,
    #[serde(default)]
    expected_seq: Option<u64>,
}

/// `POST /sessions/{id}/conflicts/{cid}:resolve` and `:cancel`.
async fn conflict_verb(
    State(state): State<Arc<AppState>>,
    Path((id, segment)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let (cid, verb) = split_verb(&segment)?;
    let conflict_id: u64 = cid
        .parse()
        .map_err(|_| ApiError::new("invalid_body", format!("conflict id {cid:?} is not a number")))?;
    let (expected, action) = match verb {
        "resolve" => {
            let b: ResolveBody = parse(&body)?;
            (
                b.expected_seq,
                Action::ResolveConflict {
                    conflict_id,
                    resolution: b.resolution,
                    prior: b.prior,
                },
            )
        }
        "cancel" => (parse::<SeqBody>(&body)?.expected_seq, Action::CancelConflict { conflict_id }),
        other => return Err(ApiError::new("not_found", format!("unknown conflict action {other:?}"))),
    };
    mutate(&state, &id, expected, action).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateBody {
    gold: Vec<DialogueDocument>,
    predictions: Predictions,
}

async fn evaluate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: EvaluateBody = parse(&body)?;
    let st = state.clone();
    let report = blocking(move || evaluate_corpus(&req.gold, &req.predictions, st.orch.ontology())).await??;
    let table = render_table(&report);
    Ok(Json(json!({ "report": report, "table": table })))
}

async fn corpus_stats(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let root = state
        .corpora
        .clone()
        .ok_or_else(|| ApiError::new("corpus_not_found", "no corpus directory is configured"))?;
    if !valid_id(&id) {
        return Err(ApiError::new("corpus_not_found", format!("no corpus {id:?}")));
    }
    let stats = blocking(move || Corpus::load(root.join(&id)).map(|c| compute_stats(&c))).await??;
    Ok(Json(serde_json::to_value(stats).map_err(ApiError::internal)?))
}

async fn ontology(State(state): State<Arc<AppState>>) -> Json<Ontology> {
    Json(state.orch.ontology().clone())
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn fallback() -> ApiError {
    ApiError::new("not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/ontology", get(ontology))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).post(session_verb))
        .route("/sessions/{id}/{op}", get(session_get_op).post(session_op))
        .route("/sessions/{id}/turns/{n}", patch(edit_turn).delete(delete_turn))
        .route("/sessions/{id}/conflicts/{cid}", post(conflict_verb))
        .route("/evaluate", post(evaluate))
        .route("/corpora/{id}/stats", get(corpus_stats))
        .fallback(fallback)
        .with_state(state)
}

/// Serve until `shutdown` resolves, then finish in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
