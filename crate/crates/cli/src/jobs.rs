//! File-backed records for asynchronous jobs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Convert,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobTimings {
    pub submitted_unix_ms: u64,
    pub started_unix_ms: Option<u64>,
    pub finished_unix_ms: Option<u64>,
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub artifacts: Vec<String>,
    pub timings: JobTimings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Job records kept in memory and mirrored to `<dir>/<job_id>.json`.
/// Records in a terminal state are never changed again.
pub struct JobStore {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

struct Inner {
    next: u64,
    jobs: BTreeMap<String, JobRecord>,
}

impl JobStore {
    /// Opens `dir`, reloading earlier records. Jobs that were still queued or
    /// running belong to a dead process and are marked failed.
    pub fn open(dir: &Path) -> Result<Self, ApiError> {
        std::fs::create_dir_all(dir).map_err(|e| ApiError::io(dir.display(), e))?;
        let mut jobs = BTreeMap::new();
        let mut next = 1;
        let entries = std::fs::read_dir(dir).map_err(|e| ApiError::io(dir.display(), e))?;
        for path in entries.filter_map(|e| e.ok().map(|e| e.path())) {
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let Ok(text) = std::fs::read_to_string(&path) else {
                continue;
            };
            let Ok(mut rec) = serde_json::from_str::<JobRecord>(&text) else {
                continue;
            };
            if let Some(n) = rec.job_id.strip_prefix("job-").and_then(|n| n.parse::<u64>().ok()) {
                next = next.max(n + 1);
            }
            if !rec.status.is_terminal() {
                rec.status = JobStatus::Failed;
                rec.error = Some(ApiError::new("INTERRUPTED", "service stopped before the job finished"));
            }
            jobs.insert(rec.job_id.clone(), rec);
        }
        let store = JobStore {
            dir: dir.to_path_buf(),
            inner: Mutex::new(Inner { next, jobs }),
        };
        let recs: Vec<JobRecord> = store.inner.lock().unwrap().jobs.values().cloned().collect();
        for rec in &recs {
            store.persist(rec);
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn submit(&self, kind: JobKind) -> JobRecord {
        let rec = {
            let mut inner = self.inner.lock().unwrap();
            let job_id = format!("job-{:06}", inner.next);
            inner.next += 1;
            let rec = JobRecord {
                job_id: job_id.clone(),
                kind,
                status: JobStatus::Queued,
                artifacts: Vec::new(),
                timings: JobTimings {
                    submitted_unix_ms: now_ms(),
                    ..Default::default()
                },
                result: None,
                error: None,
            };
            inner.jobs.insert(job_id, rec.clone());
            rec
        };
        self.persist(&rec);
        rec
    }

    pub fn get(&self, job_id: &str) -> Option<JobRecord> {
        self.inner.lock().unwrap().jobs.get(job_id).cloned()
    }

    pub fn start(&self, job_id: &str) -> bool {
        self.update(job_id, |r| {
            r.status = JobStatus::Running;
            r.timings.started_unix_ms = Some(now_ms());
        })
    }

    pub fn finish(&self, job_id: &str, result: Result<(serde_json::Value, Vec<String>), ApiError>) -> bool {
        self.update(job_id, |r| {
            let t = now_ms();
            r.timings.finished_unix_ms = Some(t);
            r.timings.elapsed_ms = Some(t.saturating_sub(r.timings.started_unix_ms.unwrap_or(t)));
            match result {
                Ok((value, artifacts)) => {
                    r.status = JobStatus::Done;
                    r.result = Some(value);
                    r.artifacts = artifacts;
                }
                Err(e) => {
                    r.status = JobStatus::Failed;
                    r.error = Some(e);
                }
            }
        })
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut JobRecord)) -> bool {
        let rec = {
            let mut inner = self.inner.lock().unwrap();
            let Some(rec) = inner.jobs.get_mut(job_id) else {
                return false;
            };
            if rec.status.is_terminal() {
                return false;
            }
            f(rec);
            rec.clone()
        };
        self.persist(&rec);
        true
    }

    fn persist(&self, rec: &JobRecord) {
        let path = self.dir.join(format!("{}.json", rec.job_id));
        let json = serde_json::to_string_pretty(rec).expect("job record serializes");
        let _ = std::fs::write(path, json);
    }
}
