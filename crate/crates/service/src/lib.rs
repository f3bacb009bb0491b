//! Local HTTP facade over a curator repository.
//!
//! Reads open the repository per request and never block. Mutations are
//! serialised through one in-process writer and hold the repository lock
//! for their whole duration, so a concurrent CLI writer sees `LockHeld`.

mod error;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequestParts, Multipart, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use curator_core::artefact::StoredObject;
use curator_core::workflow::replay::resolve_target;
use curator_core::{views, DocumentRef, GateOverrides, PhaseId, Repository, ResearcherId, SubjectKind};

pub use error::{ApiError, ServiceError};

/// Header naming the acting researcher on mutating requests.
pub const AUTHOR_HEADER: &str = "x-curator-author";

/// Upper bound on a long-poll wait.
pub const LONG_POLL_CAP: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub root: PathBuf,
    /// Directory of static web UI assets served under `/ui`.
    pub ui: Option<PathBuf>,
    pub poll_cap: Duration,
    pub poll_interval: Duration,
}

impl ServiceConfig {
    pub fn new(root: PathBuf) -> Self {
        ServiceConfig {
            root,
            ui: None,
            poll_cap: LONG_POLL_CAP,
            poll_interval: Duration::from_millis(100),
        }
    }
}

struct AppState {
    config: ServiceConfig,
    writer: tokio::sync::Mutex<()>,
}

type Shared = Arc<AppState>;
type ApiResult = Result<Doc, ApiError>;

/// A canonical JSON response body, newline terminated like the CLI's
/// `--json` output.
pub struct Doc(pub StatusCode, pub Value);

impl IntoResponse for Doc {
    fn into_response(self) -> Response {
        match views::render(&self.1) {
            Ok(mut text) => {
                text.push('\n');
                (self.0, [(header::CONTENT_TYPE, "application/json")], text).into_response()
            }
            Err(e) => ApiError::from(e).into_response(),
        }
    }
}

fn ok(v: Value) -> ApiResult {
    Ok(Doc(StatusCode::OK, v))
}

/// The acting researcher, taken on trust from the request header.
pub struct Author(pub ResearcherId);

impl<S: Send + Sync> FromRequestParts<S> for Author {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        let value = parts
            .headers
            .get(AUTHOR_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| ApiError::invalid("MissingAuthor", "X-Curator-Author header is required"))?;
        Ok(Author(ResearcherId::new(value)))
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::invalid("MalformedRequest", &e.body_text()))
}

pub fn router(config: ServiceConfig) -> Router {
    let ui = config.ui.clone();
    let state = Arc::new(AppState {
        config,
        writer: tokio::sync::Mutex::new(()),
    });
    let api = Router::new()
        .route("/project", get(project))
        .route("/stats", get(stats))
        .route("/log/{phase}/{branch}", get(log))
        .route("/artefact/{id}", get(artefact))
        .route("/releases", get(releases))
        .route("/rounds", get(rounds).post(open_round))
        .route("/rounds/{id}", get(round))
        .route("/rounds/{id}/votes", post(vote))
        .route("/rounds/{id}/close", post(close_round))
        .route("/artefacts", post(upload))
        .route("/cycles/close", post(close_cycle))
        .route("/phases/advance", post(advance))
        .route("/branches", post(branch))
        .route("/merges", post(merge))
        .with_state(state);
    match ui {
        Some(dir) => api.nest_service("/ui", ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `port` on localhost, calls `ready` with the bound address and
/// serves until the process is stopped.
pub fn run(config: ServiceConfig, port: u16, ready: impl FnOnce(SocketAddr)) -> Result<(), ServiceError> {
    Repository::open(&config.root)?;
    let runtime = tokio::runtime::Runtime::new().map_err(ServiceError::Runtime)?;
    runtime.block_on(async move {
        let addr = SocketAddr::from(([127, 0, 0, 1], port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| ServiceError::Bind { addr, source })?;
        ready(listener.local_addr().map_err(ServiceError::Runtime)?);
        axum::serve(listener, router(config))
            .await
            .map_err(ServiceError::Runtime)
    })
}

async fn read<F>(state: &Shared, f: F) -> ApiResult
where
    F: FnOnce(&Repository) -> curator_core::Result<Value> + Send + 'static,
{
    let root = state.config.root.clone();
    let value = tokio::task::spawn_blocking(move || {
        let repo = Repository::open(&root)?;
        f(&repo)
    })
    .await
    .map_err(ApiError::internal)??;
    ok(value)
}

async fn mutate<F>(state: &Shared, author: ResearcherId, status: StatusCode, f: F) -> ApiResult
where
    F: FnOnce(&mut Repository, &ResearcherId) -> curator_core::Result<Value> + Send + 'static,
{
    let _writer = state.writer.lock().await;
    let root = state.config.root.clone();
    let value = tokio::task::spawn_blocking(move || {
        let mut repo = Repository::open(&root)?;
        repo.require_member(&author)?;
        repo.lock()?;
        let result = f(&mut repo, &author);
        repo.unlock();
        result
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(Doc(status, value))
}

async fn project(State(s): State<Shared>) -> ApiResult {
    read(&s, views::project).await
}

async fn stats(State(s): State<Shared>) -> ApiResult {
    read(&s, views::stats).await
}

async fn log(State(s): State<Shared>, Path((phase, branch)): Path<(String, String)>) -> ApiResult {
    let phase: PhaseId = phase.parse()?;
    read(&s, move |r| views::log(r, &phase, &branch)).await
}

async fn artefact(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let id = id.parse()?;
    read(&s, move |r| views::artefact(r, &id)).await
}

async fn releases(State(s): State<Shared>) -> ApiResult {
    read(&s, views::releases).await
}

async fn rounds(State(s): State<Shared>) -> ApiResult {
    read(&s, views::rounds).await
}

#[derive(Deserialize)]
struct Since {
    since: Option<usize>,
}

async fn round(State(s): State<Shared>, Path(id): Path<String>, Query(q): Query<Since>) -> ApiResult {
    let started = Instant::now();
    loop {
        let root = s.config.root.clone();
        let rid = id.clone();
        let round = tokio::task::spawn_blocking(move || Repository::open(&root)?.round(&rid))
            .await
            .map_err(ApiError::internal)??;
        let ready = match q.since {
            None => true,
            Some(n) => round.ballots.len() > n || round.is_closed(),
        };
        if ready || started.elapsed() >= s.config.poll_cap {
            return ok(views::round(&round)?);
        }
        tokio::time::sleep(s.config.poll_interval).await;
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct OpenRound {
    kind: SubjectKind,
    #[serde(default = "head")]
    target: String,
    #[serde(default)]
    group: Option<Vec<ResearcherId>>,
    #[serde(flatten)]
    gate: GateOverrides,
}

fn head() -> String {
    "head".to_owned()
}

async fn open_round(State(s): State<Shared>, Author(a): Author, payload: Result<Json<OpenRound>, JsonRejection>) -> ApiResult {
    let req = body(payload)?;
    mutate(&s, a, StatusCode::CREATED, move |r, _| {
        let target = resolve_target(r, &req.target)?;
        let config = req.gate.apply(r.config().defaults)?;
        let round = r.open_round(req.kind, &target, req.group.as_deref(), Some(config))?;
        views::round(&round)
    })
    .await
}

#[derive(Deserialize)]
struct Vote {
    pref: f64,
    #[serde(default)]
    credits: Option<u64>,
}

async fn vote(
    State(s): State<Shared>,
    Author(a): Author,
    Path(id): Path<String>,
    payload: Result<Json<Vote>, JsonRejection>,
) -> ApiResult {
    let req = body(payload)?;
    mutate(&s, a, StatusCode::OK, move |r, who| {
        views::round(&r.cast_vote(&id, who, req.pref, req.credits)?)
    })
    .await
}

async fn close_round(State(s): State<Shared>, Author(a): Author, Path(id): Path<String>) -> ApiResult {
    mutate(&s, a, StatusCode::OK, move |r, _| views::round(&r.close_round(&id)?)).await
}

fn commit_doc(commit: &curator_core::Commit) -> curator_core::Result<Value> {
    let mut v = serde_json::to_value(commit)?;
    v["id"] = json!(commit.id());
    Ok(v)
}

#[derive(Deserialize)]
struct RoundRef {
    round: String,
}

async fn close_cycle(State(s): State<Shared>, Author(a): Author, payload: Result<Json<RoundRef>, JsonRejection>) -> ApiResult {
    let req = body(payload)?;
    mutate(&s, a, StatusCode::CREATED, move |r, who| commit_doc(&r.close_cycle(&req.round, who)?)).await
}

#[derive(Deserialize)]
struct Advance {
    round: String,
    #[serde(default)]
    release: Option<String>,
}

async fn advance(State(s): State<Shared>, Author(a): Author, payload: Result<Json<Advance>, JsonRejection>) -> ApiResult {
    let req = body(payload)?;
    mutate(&s, a, StatusCode::OK, move |r, who| {
        let release = r.advance_phase(&req.round, req.release.as_deref(), who)?;
        let mut v = views::project(r)?;
        v["release"] = serde_json::to_value(release)?;
        Ok(v)
    })
    .await
}

#[derive(Deserialize)]
struct NewBranch {
    name: String,
    #[serde(default)]
    from: Option<String>,
    #[serde(default)]
    filter: Option<String>,
}

async fn branch(State(s): State<Shared>, Author(a): Author, payload: Result<Json<NewBranch>, JsonRejection>) -> ApiResult {
    let req = body(payload)?;
    mutate(&s, a, StatusCode::CREATED, move |r, who| {
        let from = match &req.from {
            Some(spec) => Some(resolve_target(r, spec)?),
            None => None,
        };
        let b = r.branch(&req.name, from.as_ref(), req.filter.as_deref(), who)?;
        Ok(serde_json::to_value(b)?)
    })
    .await
}

#[derive(Deserialize)]
struct Merge {
    from: String,
    #[serde(default)]
    into: Option<String>,
    round: String,
    #[serde(default)]
    resolve: BTreeMap<String, String>,
}

async fn merge(State(s): State<Shared>, Author(a): Author, payload: Result<Json<Merge>, JsonRejection>) -> ApiResult {
    let req = body(payload)?;
    mutate(&s, a, StatusCode::CREATED, move |r, who| {
        let c = r.merge_choosing(&req.from, req.into.as_deref(), &req.resolve, who, &req.round)?;
        commit_doc(&c)
    })
    .await
}

/// Multipart fields: `path` (text), `document` (file part; its content
/// type becomes the blob media type, `text/plain` parts are stored inline)
/// and optional `metadata` (a JSON object of string values).
async fn upload(State(s): State<Shared>, Author(a): Author, mut form: Multipart) -> ApiResult {
    let mut path = None;
    let mut document = None;
    let mut metadata = BTreeMap::new();
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::invalid("MalformedRequest", &e.body_text());
    while let Some(field) = form.next_field().await.map_err(bad)? {
        match field.name().unwrap_or_default() {
            "path" => path = Some(field.text().await.map_err(bad)?),
            "document" => {
                let media = field.content_type().unwrap_or("application/octet-stream").to_owned();
                document = Some((media, field.bytes().await.map_err(bad)?));
            }
            "metadata" => {
                let text = field.text().await.map_err(bad)?;
                metadata = parse_json::<BTreeMap<String, String>>(&text)?;
            }
            other => {
                return Err(ApiError::invalid("MalformedRequest", &format!("unexpected field {other}")));
            }
        }
    }
    let path = path.ok_or_else(|| ApiError::invalid("MalformedRequest", "missing path field"))?;
    let (media, bytes) = document.ok_or_else(|| ApiError::invalid("MalformedRequest", "missing document field"))?;
    mutate(&s, a, StatusCode::CREATED, move |r, who| {
        let content = match (media.split(';').next().map(str::trim), std::str::from_utf8(&bytes)) {
            (Some("text/plain"), Ok(text)) => DocumentRef::text(text),
            _ => r.put_blob(&bytes, &media)?,
        };
        let entries: Vec<(String, String)> = metadata.into_iter().collect();
        let id = r.add_document(&path, content, &entries, who)?;
        Ok(json!({ "id": id, "path": path }))
    })
    .await
}

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, ApiError> {
    serde_json::from_str(text).map_err(|e| ApiError::invalid("MalformedRequest", &e.to_string()))
}
