//! File-backed submission store.
//!
//! ```text
//! <state dir>/
//!   submissions.jsonl     append-only event ledger, one JSON object per line
//!   payloads/<id>.csv     submitted estimates, verbatim
//!   reports/<id>.json     final report, written once before the Done event
//! ```

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use poseval_core::dataset::write_atomic;
use poseval_core::harness::output::ReportFile;

pub const LEDGER_FILE: &str = "submissions.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}, line {line}: {msg}", path.display())]
    Corrupt { path: PathBuf, line: usize, msg: String },
    #[error("unknown submission '{0}'")]
    UnknownId(String),
    #[error("submission '{id}' cannot go from {from:?} to {to:?}")]
    InvalidTransition { id: String, from: Status, to: Status },
    #[error("{0}")]
    Report(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Queued,
    Running,
    Done,
    Failed,
}

impl Status {
    pub fn can_become(self, next: Status) -> bool {
        matches!(
            (self, next),
            (Status::Queued, Status::Running)
                | (Status::Running, Status::Done)
                | (Status::Running, Status::Failed)
        )
    }

    pub fn is_pending(self) -> bool {
        matches!(self, Status::Queued | Status::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: String,
    /// Arrival order; breaks ties between equal timestamps.
    pub seq: u64,
    pub method_name: String,
    pub received_at_ms: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Event {
    id: String,
    status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    method_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    received_at_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Default)]
struct State {
    order: Vec<String>,
    by_id: HashMap<String, Submission>,
}

pub struct Store {
    dir: PathBuf,
    ledger: Mutex<File>,
    state: RwLock<State>,
    reports: RwLock<HashMap<String, Arc<ReportFile>>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Store {
    /// Opens or creates a store and replays its ledger.
    ///
    /// A truncated last line (a crash mid-append) is dropped with a warning;
    /// any other malformed line is an error.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        for sub in ["payloads", "reports"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let path = dir.join(LEDGER_FILE);
        let mut state = State::default();
        if path.exists() {
            let file = File::open(&path).map_err(io_err(&path))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(io_err(&path))?;
            let n = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |msg: String| StoreError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    msg,
                };
                let event: Event = match serde_json::from_str(line) {
                    Ok(e) => e,
                    Err(e) if i + 1 == n => {
                        log::warn!("{}: dropping truncated last line: {e}", path.display());
                        break;
                    }
                    Err(e) => return Err(corrupt(e.to_string())),
                };
                Self::apply(&mut state, event).map_err(corrupt)?;
            }
        }
        let ledger = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            ledger: Mutex::new(ledger),
            state: RwLock::new(state),
            reports: RwLock::new(HashMap::new()),
        })
    }

    fn apply(state: &mut State, e: Event) -> Result<(), String> {
        if e.status == Status::Queued {
            if state.by_id.contains_key(&e.id) {
                return Err(format!("submission '{}' created twice", e.id));
            }
            let (Some(seq), Some(method_name), Some(received_at_ms)) =
                (e.seq, e.method_name, e.received_at_ms)
            else {
                return Err("creation event lacks seq, method_name or received_at_ms".into());
            };
            state.order.push(e.id.clone());
            state.by_id.insert(
                e.id.clone(),
                Submission {
                    id: e.id,
                    seq,
                    method_name,
                    received_at_ms,
                    status: Status::Queued,
                    error: None,
                },
            );
            return Ok(());
        }
        let sub = state
            .by_id
            .get_mut(&e.id)
            .ok_or_else(|| format!("event for unknown submission '{}'", e.id))?;
        if !sub.status.can_become(e.status) {
            return Err(format!("invalid transition {:?} -> {:?}", sub.status, e.status));
        }
        sub.status = e.status;
        sub.error = e.error;
        Ok(())
    }

    /// Appends one line and syncs it. The ledger lock keeps lines whole.
    fn append(&self, event: &Event) -> Result<(), StoreError> {
        let path = self.dir.join(LEDGER_FILE);
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        let mut f = self.ledger.lock();
        f.write_all(line.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    pub fn payload_path(&self, id: &str) -> PathBuf {
        self.dir.join("payloads").join(format!("{id}.csv"))
    }

    pub fn report_path(&self, id: &str) -> PathBuf {
        self.dir.join("reports").join(format!("{id}.json"))
    }

    /// Persists the payload and records a new queued submission.
    pub fn create(&self, method_name: &str, payload: &[u8]) -> Result<Submission, StoreError> {
        let id = uuid::Uuid::new_v4().to_string();
        let path = self.payload_path(&id);
        write_atomic(&path, payload).map_err(|e| StoreError::Report(e.to_string()))?;
        // Holding the write lock across the append keeps seq order equal to
        // ledger order.
        let mut state = self.state.write();
        let sub = Submission {
            id: id.clone(),
            seq: state.order.len() as u64,
            method_name: method_name.to_string(),
            received_at_ms: now_ms(),
            status: Status::Queued,
            error: None,
        };
        self.append(&Event {
            id: id.clone(),
            status: Status::Queued,
            seq: Some(sub.seq),
            method_name: Some(sub.method_name.clone()),
            received_at_ms: Some(sub.received_at_ms),
            error: None,
        })?;
        state.order.push(id.clone());
        state.by_id.insert(id, sub.clone());
        Ok(sub)
    }

    fn transition(&self, id: &str, to: Status, error: Option<String>) -> Result<(), StoreError> {
        let mut state = self.state.write();
        let sub = state
            .by_id
            .get_mut(id)
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))?;
        if !sub.status.can_become(to) {
            return Err(StoreError::InvalidTransition {
                id: id.to_string(),
                from: sub.status,
                to,
            });
        }
        self.append(&Event {
            id: id.to_string(),
            status: to,
            seq: None,
            method_name: None,
            received_at_ms: None,
            error: error.clone(),
        })?;
        sub.status = to;
        sub.error = error;
        Ok(())
    }

    pub fn mark_running(&self, id: &str) -> Result<(), StoreError> {
        self.transition(id, Status::Running, None)
    }

    /// Writes the report, then records completion.
    pub fn finish(&self, id: &str, report: ReportFile) -> Result<(), StoreError> {
        let path = self.report_path(id);
        write_atomic(&path, report.to_json().as_bytes())
            .map_err(|e| StoreError::Report(e.to_string()))?;
        self.transition(id, Status::Done, None)?;
        self.reports.write().insert(id.to_string(), Arc::new(report));
        Ok(())
    }

    pub fn fail(&self, id: &str, error: String) -> Result<(), StoreError> {
        self.transition(id, Status::Failed, Some(error))
    }

    pub fn get(&self, id: &str) -> Option<Submission> {
        self.state.read().by_id.get(id).cloned()
    }

    /// All submissions in arrival order.
    pub fn list(&self) -> Vec<Submission> {
        let state = self.state.read();
        state.order.iter().map(|id| state.by_id[id].clone()).collect()
    }

    pub fn pending(&self) -> Vec<Submission> {
        self.list().into_iter().filter(|s| s.status.is_pending()).collect()
    }

    pub fn count(&self, status: Status) -> usize {
        self.state.read().by_id.values().filter(|s| s.status == status).count()
    }

    pub fn payload(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.payload_path(id);
        std::fs::read(&path).map_err(io_err(&path))
    }

    /// Report of a finished submission.
    pub fn report(&self, id: &str) -> Result<Option<Arc<ReportFile>>, StoreError> {
        if self.get(id).map(|s| s.status) != Some(Status::Done) {
            return Ok(None);
        }
        if let Some(r) = self.reports.read().get(id) {
            return Ok(Some(Arc::clone(r)));
        }
        let path = self.report_path(id);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let report: ReportFile = serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            path: path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let report = Arc::new(report);
        self.reports.write().insert(id.to_string(), Arc::clone(&report));
        Ok(Some(report))
    }
}
