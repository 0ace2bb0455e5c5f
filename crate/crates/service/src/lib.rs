//! HTTP service for the validation pass of a re-annotation.
//!
//! On start the service diffs a revised dataset against the original,
//! logs a revise event for every changed record that the log does not
//! know yet, and draws the validation sample. Annotators then pull items
//! and vote through a small JSON API:
//!
//! | route | purpose |
//! |---|---|
//! | `GET /api/next?annotator=ID` | next unvoted item in the annotator's order |
//! | `POST /api/vote` | `{annotator, record_id, label}` |
//! | `GET /api/stats` | agreement so far and per-annotator progress |
//! | `GET /api/items/{id}` | one item and its vote count |
//!
//! Errors are `{code, message}` JSON. All writes go through one lock, so a
//! vote is checked and appended atomically.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mdbench::annotation::{agreement_rate, diff_annotations, missing_revisions, now_millis, sample_disagreements, AnnotationStore};
use mdbench::data::{Dataset, Scheme};
use mdbench::Error;

/// Annotator id written on the revise events the service creates.
pub const REVISER_ID: &str = "reviser";

#[derive(Clone, Debug)]
pub struct SessionConfig {
    /// Bearer tokens of the validators; fixed for the life of the process.
    pub annotators: Vec<String>,
    pub sample_size: usize,
    pub seed: u64,
    pub static_dir: Option<PathBuf>,
}

pub struct Session {
    store: RwLock<AnnotationStore>,
    original: Dataset,
    sample: Vec<String>,
    annotators: BTreeSet<String>,
    seed: u64,
    static_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::DuplicateVote { .. } => ApiError::new(StatusCode::CONFLICT, "duplicate_vote", e.to_string()),
            Error::InvalidLabel { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_label", e.to_string()),
            Error::UnknownRecord(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_item", e.to_string()),
            other => {
                log::error!("{other}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkQueueItem {
    pub record_id: String,
    pub sentence: Vec<String>,
    pub aspect_index: usize,
    pub original_label: i8,
    pub scheme: Scheme,
    /// Items left for this annotator, this one included.
    pub remaining: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub done: bool,
    pub item: Option<WorkQueueItem>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VoteRequest {
    pub annotator: String,
    pub record_id: String,
    pub label: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteResponse {
    pub ok: bool,
    pub remaining: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub annotator: String,
    pub voted: usize,
    pub remaining: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub sample_size: usize,
    pub total_votes: usize,
    pub agreeing: usize,
    /// `null` until the first vote.
    pub rate: Option<f64>,
    pub unanimity_rate: Option<f64>,
    pub progress: Vec<Progress>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemResponse {
    pub record_id: String,
    pub sentence: Vec<String>,
    pub aspect_index: usize,
    pub original_label: i8,
    pub scheme: Scheme,
    pub in_sample: bool,
    pub votes: usize,
}

#[derive(Deserialize)]
pub struct NextQuery {
    pub annotator: Option<String>,
}

fn annotator_seed(seed: u64, annotator: &str) -> u64 {
    let digest = Sha256::digest(annotator.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(bytes)
}

impl Session {
    /// Opens the log at `log_path`, adds revise events for changed records
    /// not yet logged, and draws the validation sample.
    pub fn open(log_path: impl AsRef<Path>, original: Dataset, revised: &Dataset, cfg: SessionConfig) -> mdbench::Result<Self> {
        if cfg.annotators.is_empty() {
            return Err(Error::Config("at least one annotator token is required".into()));
        }
        let diff = diff_annotations(&original, revised)?;
        let mut store = AnnotationStore::open(log_path, &original)?;
        let revised_labels: BTreeMap<&str, i8> = revised.records.iter().map(|r| (r.id.as_str(), r.label.value)).collect();
        let missing: Vec<String> = missing_revisions(store.state(), &diff.changed).into_iter().cloned().collect();
        let ts = now_millis();
        for id in &missing {
            store.revise(id, REVISER_ID, revised_labels[id.as_str()], ts)?;
        }
        let n = cfg.sample_size.min(diff.changed.len());
        let sample = sample_disagreements(&diff.changed, n, cfg.seed)?;
        log::info!(
            "{} changed of {}; {} newly logged; validating {}",
            diff.changed.len(),
            diff.total,
            missing.len(),
            sample.len()
        );
        Ok(Self {
            store: RwLock::new(store),
            original,
            sample,
            annotators: cfg.annotators.into_iter().collect(),
            seed: cfg.seed,
            static_dir: cfg.static_dir,
        })
    }

    pub fn sample(&self) -> &[String] {
        &self.sample
    }

    /// The sample in the annotator's own stable order.
    pub fn order_for(&self, annotator: &str) -> Vec<String> {
        let mut order = self.sample.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(annotator_seed(self.seed, annotator)));
        order
    }

    fn check_annotator(&self, annotator: Option<&str>) -> Result<String, ApiError> {
        match annotator {
            Some(a) if self.annotators.contains(a) => Ok(a.to_string()),
            Some(a) => Err(ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unknown_session",
                format!("no session for annotator {a:?}"),
            )),
            None => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unknown_session", "annotator parameter missing")),
        }
    }

    fn read_store(&self) -> std::sync::RwLockReadGuard<'_, AnnotationStore> {
        self.store.read().unwrap_or_else(|p| p.into_inner())
    }

    fn remaining(&self, store: &AnnotationStore, annotator: &str) -> usize {
        let revs = &store.state().revisions;
        self.sample
            .iter()
            .filter(|id| !revs.get(*id).is_some_and(|r| r.has_voted(annotator)))
            .count()
    }

    pub fn next_item(&self, annotator: Option<&str>) -> Result<NextResponse, ApiError> {
        let annotator = self.check_annotator(annotator)?;
        let store = self.read_store();
        let revs = &store.state().revisions;
        let remaining = self.remaining(&store, &annotator);
        let next = self
            .order_for(&annotator)
            .into_iter()
            .find(|id| !revs.get(id).is_some_and(|r| r.has_voted(&annotator)));
        let item = match next {
            Some(id) => {
                let r = self.original.get(&id).ok_or_else(|| Error::UnknownRecord(id.clone()))?;
                Some(WorkQueueItem {
                    record_id: id,
                    sentence: r.sentence.clone(),
                    aspect_index: r.aspect_index,
                    original_label: r.label.value,
                    scheme: self.original.scheme,
                    remaining,
                })
            }
            None => None,
        };
        Ok(NextResponse {
            done: item.is_none(),
            item,
        })
    }

    pub fn submit_vote(&self, req: &VoteRequest) -> Result<VoteResponse, ApiError> {
        let annotator = self.check_annotator(Some(&req.annotator))?;
        if self.sample.binary_search(&req.record_id).is_err() {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_item",
                format!("{} is not in the validation sample", req.record_id),
            ));
        }
        let mut store = self.store.write().unwrap_or_else(|p| p.into_inner());
        store.vote(&req.record_id, &annotator, req.label, now_millis())?;
        Ok(VoteResponse {
            ok: true,
            remaining: self.remaining(&store, &annotator),
        })
    }

    pub fn stats(&self) -> StatsResponse {
        let store = self.read_store();
        let in_sample: Vec<_> = self
            .sample
            .iter()
            .filter_map(|id| store.state().revisions.get(id).cloned())
            .collect();
        let agreement = agreement_rate(&in_sample).ok();
        let progress = self
            .annotators
            .iter()
            .map(|a| {
                let remaining = self.remaining(&store, a);
                Progress {
                    annotator: a.clone(),
                    voted: self.sample.len() - remaining,
                    remaining,
                }
            })
            .collect();
        StatsResponse {
            sample_size: self.sample.len(),
            total_votes: agreement.as_ref().map_or(0, |s| s.total_votes),
            agreeing: agreement.as_ref().map_or(0, |s| s.agreeing),
            rate: agreement.as_ref().map(|s| s.rate),
            unanimity_rate: agreement.as_ref().map(|s| s.unanimity_rate),
            progress,
        }
    }

    pub fn item(&self, id: &str) -> Result<ItemResponse, ApiError> {
        let r = self
            .original
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_item", format!("no record {id}")))?;
        let store = self.read_store();
        Ok(ItemResponse {
            record_id: r.id.clone(),
            sentence: r.sentence.clone(),
            aspect_index: r.aspect_index,
            original_label: r.label.value,
            scheme: self.original.scheme,
            in_sample: self.sample.binary_search(&r.id).is_ok(),
            votes: store.state().revisions.get(id).map_or(0, |rev| rev.validator_votes.len()),
        })
    }
}

async fn next_handler(State(s): State<Arc<Session>>, Query(q): Query<NextQuery>) -> ApiResult<NextResponse> {
    s.next_item(q.annotator.as_deref()).map(Json)
}

async fn vote_handler(State(s): State<Arc<Session>>, body: Bytes) -> ApiResult<VoteResponse> {
    let req: VoteRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?;
    s.submit_vote(&req).map(Json)
}

async fn stats_handler(State(s): State<Arc<Session>>) -> Json<StatsResponse> {
    Json(s.stats())
}

async fn item_handler(State(s): State<Arc<Session>>, UrlPath(id): UrlPath<String>) -> ApiResult<ItemResponse> {
    s.item(&id).map(Json)
}

const PLACEHOLDER_PAGE: &str = "<!doctype html><title>mdbench annotation</title><p>API at <code>/api</code>; start the server with <code>--static-dir</code> to serve the annotation UI.</p>\n";

pub fn router(session: Arc<Session>) -> Router {
    let api = Router::new()
        .route("/api/next", get(next_handler))
        .route("/api/vote", post(vote_handler))
        .route("/api/stats", get(stats_handler))
        .route("/api/items/{id}", get(item_handler));
    let app = match &session.static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER_PAGE) })),
    };
    app.with_state(session)
}

pub async fn serve(addr: SocketAddr, session: Arc<Session>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(session)).await
}
