//! In-memory analysis jobs.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use fragility::config::BiasConfig;
use fragility::io::ResultDocument;
use fragility::metrics::MetricSpec;
use fragility::program::Sense;
use fragility::solver::{sweep_grid_with, sweep_with, SolverOptions, SweepPoint};
use fragility::table::ObservedTable;
use serde::Serialize;
use tokio::sync::Semaphore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

/// Everything needed to run an analysis.
#[derive(Debug, Clone)]
pub struct AnalysisSpec {
    pub config: BiasConfig,
    pub table: ObservedTable,
    pub metric: MetricSpec,
    pub deltas: Vec<f64>,
    pub sense: Sense,
    pub options: SolverOptions,
    pub second: Option<(BiasConfig, Vec<f64>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub analysis_id: String,
    pub status: JobStatus,
    /// Per-budget bounds in the order they certified.
    pub partial: Vec<SweepPoint>,
    pub document: Option<ResultDocument>,
    pub error: Option<String>,
}

struct JobState {
    status: JobStatus,
    partial: Vec<SweepPoint>,
    document: Option<ResultDocument>,
    error: Option<String>,
}

pub struct Job {
    id: String,
    state: Mutex<JobState>,
    cancel: AtomicBool,
}

impl Job {
    pub fn view(&self) -> JobView {
        let s = self.state.lock().expect("job lock");
        JobView {
            analysis_id: self.id.clone(),
            status: s.status,
            partial: s.partial.clone(),
            document: s.document.clone(),
            error: s.error.clone(),
        }
    }

    fn set(&self, f: impl FnOnce(&mut JobState)) {
        f(&mut self.state.lock().expect("job lock"));
    }

    /// Request cancellation; finished jobs are left alone.
    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
        self.set(|s| {
            if s.status == JobStatus::Queued {
                s.status = JobStatus::Cancelled;
            }
        });
    }
}

/// Run the analysis synchronously, recording progress on `job`.
fn run(job: &Job, spec: &AnalysisSpec) -> Result<ResultDocument, String> {
    let cancel = Some(&job.cancel);
    let record = |p: &SweepPoint| job.set(|s| s.partial.push(p.clone()));
    match &spec.second {
        None => sweep_with(
            &spec.config,
            &spec.table,
            &spec.metric,
            &spec.deltas,
            spec.sense,
            &spec.options,
            cancel,
            &mut |_, p| record(p),
        )
        .map(|r| ResultDocument::from_sweep(&spec.config, &spec.table, &r)),
        Some((second, second_deltas)) => sweep_grid_with(
            &spec.config,
            second,
            &spec.table,
            &spec.metric,
            &spec.deltas,
            second_deltas,
            spec.sense,
            &spec.options,
            cancel,
            &mut |_, _, p| record(p),
        )
        .map(|g| ResultDocument::from_grid(&spec.config, second, &spec.table, &g)),
    }
    .map_err(|e| e.to_string())
}

pub struct JobStore {
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    keys: Mutex<HashMap<String, String>>,
    next: AtomicU64,
    workers: Arc<Semaphore>,
    persist: Option<PathBuf>,
}

impl JobStore {
    pub fn new(workers: usize, persist: Option<PathBuf>) -> Self {
        JobStore {
            jobs: RwLock::new(HashMap::new()),
            keys: Mutex::new(HashMap::new()),
            next: AtomicU64::new(1),
            workers: Arc::new(Semaphore::new(workers.max(1))),
            persist,
        }
    }

    pub fn get(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.read().expect("store lock").get(id).cloned()
    }

    /// Enqueue a job. `Err` carries the id already registered under the
    /// idempotency key.
    pub fn submit(self: &Arc<Self>, spec: AnalysisSpec, key: Option<String>) -> Result<String, String> {
        let id = {
            let mut keys = self.keys.lock().expect("key lock");
            if let Some(k) = &key {
                if let Some(existing) = keys.get(k) {
                    return Err(existing.clone());
                }
            }
            let id = format!("an-{:06}", self.next.fetch_add(1, Ordering::Relaxed));
            if let Some(k) = key {
                keys.insert(k, id.clone());
            }
            id
        };
        let job = Arc::new(Job {
            id: id.clone(),
            state: Mutex::new(JobState { status: JobStatus::Queued, partial: Vec::new(), document: None, error: None }),
            cancel: AtomicBool::new(false),
        });
        self.jobs.write().expect("store lock").insert(id.clone(), job.clone());
        let store = self.clone();
        tokio::spawn(async move {
            let Ok(_permit) = store.workers.clone().acquire_owned().await else { return };
            if job.cancel.load(Ordering::Relaxed) {
                return;
            }
            job.set(|s| s.status = JobStatus::Running);
            let worker = job.clone();
            let out = tokio::task::spawn_blocking(move || run(&worker, &spec)).await;
            let out = out.unwrap_or_else(|e| Err(format!("worker panicked: {e}")));
            let cancelled = job.cancel.load(Ordering::Relaxed);
            if let (Ok(doc), Some(dir)) = (&out, &store.persist) {
                if !cancelled {
                    let _ = std::fs::write(dir.join(format!("{}.json", job.id)), doc.to_json());
                }
            }
            job.set(|s| match out {
                Ok(_) if cancelled => s.status = JobStatus::Cancelled,
                Ok(doc) => {
                    s.status = JobStatus::Done;
                    s.document = Some(doc);
                }
                Err(e) => {
                    s.status = if cancelled { JobStatus::Cancelled } else { JobStatus::Failed };
                    s.error = Some(e);
                }
            });
        });
        Ok(id)
    }
}
