//! Submission service: accepts estimate files over HTTP, scores them one at
//! a time against a fixed benchmark and serves reports and leaderboards.
//!
//! | method | path                      | answer                              |
//! |--------|---------------------------|-------------------------------------|
//! | POST   | `/v1/submissions?method_name=` | 202 with id, 400 with line diagnostics, 413 |
//! | GET    | `/v1/submissions/{id}`    | status, and the report once done    |
//! | GET    | `/v1/leaderboard?dataset=`| finished submissions by recall      |

pub mod store;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{body::Bytes, Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;

use poseval_core::dataset::{self, DatasetError, EstimateRecord, TestTarget};
use poseval_core::harness::output::ReportFile;
use poseval_core::harness::{EvalConfig, Evaluator, HarnessError};

pub use store::{Status, Store, StoreError, Submission};

pub const DEFAULT_MAX_BODY_BYTES: usize = 64 * 1024 * 1024;
pub const DEFAULT_QUEUE_DEPTH: usize = 256;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ServiceError {
    pub fn is_io(&self) -> bool {
        match self {
            ServiceError::Harness(e) => e.is_io(),
            ServiceError::Dataset(e) => e.is_io(),
            ServiceError::Store(e) => matches!(e, StoreError::Io { .. }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub state_dir: PathBuf,
    pub dataset_root: PathBuf,
    /// Without a targets file every annotated object is a target.
    pub targets_file: Option<PathBuf>,
    pub eval: EvalConfig,
    pub max_body_bytes: usize,
    /// Submissions waiting to be scored before new ones are turned away.
    pub queue_depth: usize,
}

impl ServiceConfig {
    pub fn new(state_dir: PathBuf, dataset_root: PathBuf) -> Self {
        Self {
            state_dir,
            dataset_root,
            targets_file: None,
            eval: EvalConfig::default(),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            queue_depth: DEFAULT_QUEUE_DEPTH,
        }
    }
}

struct Inner {
    store: Store,
    evaluator: Evaluator,
    targets: BTreeMap<String, Vec<TestTarget>>,
    eval: EvalConfig,
    queue_depth: usize,
    queue: mpsc::UnboundedSender<String>,
}

impl Inner {
    fn parse(&self, text: &str, origin: &str) -> Result<BTreeMap<String, Vec<EstimateRecord>>, HarnessError> {
        let sections = dataset::parse_estimates(text, origin)?;
        self.evaluator.resolve_estimates(sections)
    }

    /// Blocking; runs on the blocking pool.
    fn score(&self, id: &str) -> Result<ReportFile, String> {
        let bytes = self.store.payload(id).map_err(|e| e.to_string())?;
        let text = String::from_utf8(bytes).map_err(|_| "payload is not UTF-8".to_string())?;
        let estimates = self.parse(&text, &format!("submission {id}")).map_err(|e| e.to_string())?;
        let eval = self
            .evaluator
            .evaluate(&self.targets, &estimates, &self.eval)
            .map_err(|e| e.to_string())?;
        Ok(ReportFile::of(&eval))
    }
}

async fn process(inner: Arc<Inner>, id: String) {
    let Some(sub) = inner.store.get(&id) else {
        log::error!("queued submission {id} is not in the store");
        return;
    };
    match sub.status {
        Status::Queued => {
            if let Err(e) = inner.store.mark_running(&id) {
                log::error!("{e}");
                return;
            }
        }
        // Interrupted by a restart; score it again from the payload.
        Status::Running => log::info!("resuming submission {id}"),
        Status::Done | Status::Failed => return,
    }
    let job = Arc::clone(&inner);
    let job_id = id.clone();
    let outcome = tokio::task::spawn_blocking(move || job.score(&job_id))
        .await
        .unwrap_or_else(|e| Err(format!("scoring task failed: {e}")));
    let stored = match outcome {
        Ok(report) => {
            log::info!("submission {id} done, overall {:?}", report.report.overall);
            inner.store.finish(&id, report)
        }
        Err(msg) => {
            log::warn!("submission {id} failed: {msg}");
            inner.store.fail(&id, msg)
        }
    };
    if let Err(e) = stored {
        log::error!("cannot record outcome of {id}: {e}");
    }
}

/// Running service state. Build with [`Service::open`], serve
/// [`Service::router`] and start the scorer with [`Service::spawn_worker`].
pub struct Service {
    inner: Arc<Inner>,
    rx: Option<mpsc::UnboundedReceiver<String>>,
    max_body_bytes: usize,
}

impl Service {
    /// Opens the benchmark and the store. Submissions left queued or running
    /// by a previous process are queued again.
    pub fn open(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let evaluator = Evaluator::open(&cfg.dataset_root)?;
        let targets_file = cfg.targets_file.as_deref().map(dataset::load_targets).transpose()?;
        let targets = evaluator.resolve_targets(targets_file)?;
        let store = Store::open(&cfg.state_dir)?;
        let (tx, rx) = mpsc::unbounded_channel();
        for sub in store.pending() {
            tx.send(sub.id).expect("receiver is alive");
        }
        Ok(Self {
            inner: Arc::new(Inner {
                store,
                evaluator,
                targets,
                eval: cfg.eval,
                queue_depth: cfg.queue_depth,
                queue: tx,
            }),
            rx: Some(rx),
            max_body_bytes: cfg.max_body_bytes,
        })
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/v1/submissions", post(submit))
            .route("/v1/submissions/{id}", get(status))
            .route("/v1/leaderboard", get(leaderboard))
            .layer(DefaultBodyLimit::max(self.max_body_bytes))
            .with_state(Arc::clone(&self.inner))
    }

    /// Starts the single scorer task. Returns `None` if already started.
    pub fn spawn_worker(&mut self) -> Option<tokio::task::JoinHandle<()>> {
        let mut rx = self.rx.take()?;
        let inner = Arc::clone(&self.inner);
        Some(tokio::spawn(async move {
            while let Some(id) = rx.recv().await {
                process(Arc::clone(&inner), id).await;
            }
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

fn error(code: StatusCode, msg: impl Into<String>, line: Option<usize>) -> Response {
    (code, Json(ErrorBody { error: msg.into(), line })).into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionView {
    pub id: String,
    pub method_name: String,
    pub received_at_ms: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportFile>,
}

impl SubmissionView {
    fn of(sub: Submission, report: Option<ReportFile>) -> Self {
        Self {
            id: sub.id,
            method_name: sub.method_name,
            received_at_ms: sub.received_at_ms,
            status: sub.status,
            error: sub.error,
            report,
        }
    }
}

#[derive(Debug, Deserialize)]
struct SubmitQuery {
    method_name: Option<String>,
}

async fn submit(
    State(inner): State<Arc<Inner>>,
    Query(q): Query<SubmitQuery>,
    body: Result<Bytes, BytesRejection>,
) -> Response {
    let method_name = match q.method_name.as_deref().map(str::trim) {
        Some(m) if !m.is_empty() => m.to_string(),
        _ => return error(StatusCode::BAD_REQUEST, "query parameter method_name is required", None),
    };
    let body = match body {
        Ok(b) => b,
        Err(rej) => return error(rej.status(), rej.body_text(), None),
    };
    let Ok(text) = std::str::from_utf8(&body) else {
        return error(StatusCode::BAD_REQUEST, "payload is not UTF-8", None);
    };
    if let Err(e) = inner.parse(text, "payload") {
        let line = match &e {
            HarnessError::Dataset(d) => d.line(),
            _ => None,
        };
        return error(StatusCode::BAD_REQUEST, e.to_string(), line);
    }
    if inner.store.count(Status::Queued) >= inner.queue_depth {
        return error(StatusCode::SERVICE_UNAVAILABLE, "scoring queue is full, retry later", None);
    }
    let sub = match inner.store.create(&method_name, &body) {
        Ok(s) => s,
        Err(e) => {
            log::error!("{e}");
            return error(StatusCode::INTERNAL_SERVER_ERROR, "cannot store submission", None);
        }
    };
    if inner.queue.send(sub.id.clone()).is_err() {
        log::warn!("scorer is not running; {} stays queued", sub.id);
    }
    (StatusCode::ACCEPTED, Json(SubmissionView::of(sub, None))).into_response()
}

async fn status(State(inner): State<Arc<Inner>>, Path(id): Path<String>) -> Response {
    let Some(sub) = inner.store.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown submission '{id}'"), None);
    };
    let report = match inner.store.report(&id) {
        Ok(r) => r.map(|r| (*r).clone()),
        Err(e) => {
            log::error!("{e}");
            return error(StatusCode::INTERNAL_SERVER_ERROR, "cannot read report", None);
        }
    };
    Json(SubmissionView::of(sub, report)).into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub id: String,
    pub method_name: String,
    pub received_at_ms: u64,
    /// The ranking key: overall recall, or the filtered dataset's recall.
    pub recall: Option<f64>,
    pub per_dataset: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub entries: Vec<LeaderboardEntry>,
}

/// Orders finished submissions by recall, highest first. Submissions with
/// no defined recall come last; ties go to the earlier submission.
pub fn rank(finished: Vec<(Submission, Arc<ReportFile>)>, dataset: Option<&str>) -> Vec<LeaderboardEntry> {
    type Row = (Submission, Option<f64>, BTreeMap<String, Option<f64>>);
    let mut rows: Vec<Row> = finished
        .into_iter()
        .filter_map(|(sub, rep)| {
            let per: BTreeMap<String, Option<f64>> = rep
                .report
                .per_dataset
                .iter()
                .map(|(k, v)| (k.clone(), v.recall))
                .collect();
            match dataset {
                None => Some((sub, rep.report.overall, per)),
                Some(name) => {
                    let r = *per.get(name)?;
                    Some((sub, r, BTreeMap::from([(name.to_string(), r)])))
                }
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: Option<f64>| r.map_or(f64::NEG_INFINITY, |v| v);
        key(b.1)
            .total_cmp(&key(a.1))
            .then(b.1.is_some().cmp(&a.1.is_some()))
            .then(a.0.received_at_ms.cmp(&b.0.received_at_ms))
            .then(a.0.seq.cmp(&b.0.seq))
    });
    rows.into_iter()
        .enumerate()
        .map(|(i, (sub, recall, per_dataset))| LeaderboardEntry {
            rank: i + 1,
            id: sub.id,
            method_name: sub.method_name,
            received_at_ms: sub.received_at_ms,
            recall,
            per_dataset,
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct BoardQuery {
    dataset: Option<String>,
}

async fn leaderboard(State(inner): State<Arc<Inner>>, Query(q): Query<BoardQuery>) -> Response {
    let mut finished = Vec::new();
    for sub in inner.store.list() {
        match inner.store.report(&sub.id) {
            Ok(Some(r)) => finished.push((sub, r)),
            Ok(None) => {}
            Err(e) => log::error!("leaderboard skips {}: {e}", sub.id),
        }
    }
    let entries = rank(finished, q.dataset.as_deref());
    Json(Leaderboard {
        dataset: q.dataset,
        entries,
    })
    .into_response()
}

#[cfg(test)]
mod tests {
    use super::*;
    use poseval_core::harness::{Counts, DatasetRecall, RecallReport};

    fn sub(seq: u64, at: u64) -> Submission {
        Submission {
            id: format!("s{seq}"),
            seq,
            method_name: format!("m{seq}"),
            received_at_ms: at,
            status: Status::Done,
            error: None,
        }
    }

    fn rep(per: &[(&str, Option<f64>)]) -> Arc<ReportFile> {
        let per_dataset: BTreeMap<String, DatasetRecall> = per
            .iter()
            .map(|(n, r)| {
                (
                    n.to_string(),
                    DatasetRecall {
                        recall: *r,
                        per_object: BTreeMap::new(),
                        counts: Counts::default(),
                    },
                )
            })
            .collect();
        let defined: Vec<f64> = per.iter().filter_map(|p| p.1).collect();
        let overall = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Arc::new(ReportFile {
            tau_mm: 20.0,
            theta: 0.3,
            delta_mm: 15.0,
            report: RecallReport {
                per_dataset,
                overall,
                counts: Counts::default(),
            },
        })
    }

    fn ids(entries: &[LeaderboardEntry]) -> Vec<&str> {
        entries.iter().map(|e| e.id.as_str()).collect()
    }

    #[test]
    fn higher_recall_ranks_first() {
        let board = rank(
            vec![(sub(0, 10), rep(&[("a", Some(0.717))])), (sub(1, 20), rep(&[("a", Some(0.746))]))],
            None,
        );
        assert_eq!(ids(&board), ["s1", "s0"]);
        assert_eq!((board[0].rank, board[1].rank), (1, 2));
    }

    #[test]
    fn ties_go_to_the_earlier_submission() {
        let board = rank(
            vec![
                (sub(2, 10), rep(&[("a", Some(0.5))])),
                (sub(0, 30), rep(&[("a", Some(0.5))])),
                (sub(1, 10), rep(&[("a", Some(0.5))])),
            ],
            None,
        );
        assert_eq!(ids(&board), ["s1", "s2", "s0"]);
    }

    #[test]
    fn undefined_recall_sorts_last_and_filter_uses_dataset_recall() {
        let items = vec![
            (sub(0, 1), rep(&[("a", None), ("b", None)])),
            (sub(1, 2), rep(&[("a", Some(0.2)), ("b", Some(0.9))])),
            (sub(2, 3), rep(&[("a", Some(0.8)), ("b", Some(0.1))])),
        ];
        assert_eq!(ids(&rank(items.clone(), None)), ["s1", "s2", "s0"]);
        let by_a = rank(items.clone(), Some("a"));
        assert_eq!(ids(&by_a), ["s2", "s1", "s0"]);
        assert_eq!(by_a[0].recall, Some(0.8));
        assert_eq!(by_a[0].per_dataset.len(), 1);
        assert!(rank(items, Some("zeta")).is_empty());
    }
}
