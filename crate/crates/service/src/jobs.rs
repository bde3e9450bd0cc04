//! Background training jobs on a bounded pool.
//!
//! Status reads never block: progress lives in atomics and the terminal
//! outcome is written exactly once.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use axum::http::StatusCode;
use medagent_core::catalog::PredictorCatalog;
use medagent_core::dataset::Dataset;
use medagent_core::grid::{enumerate_settings, run_grid_search, GridOptions, GridProgress, GridReport, GridSpec};
use medagent_core::metrics::plot_series;
use medagent_core::vault::ModelArtifact;
use parking_lot::RwLock;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::error::ApiError;

#[derive(Debug)]
pub struct JobResult {
    pub report: GridReport,
    pub roc_svg: String,
    pub model_bytes: Vec<u8>,
    /// Frozen status payload, returned verbatim on every fetch.
    pub snapshot: Value,
}

#[derive(Debug)]
pub enum Outcome {
    Succeeded(Box<JobResult>),
    Failed { code: String, message: String },
}

#[derive(Debug)]
pub struct Job {
    pub id: String,
    pub settings: usize,
    pub seed: u64,
    running: AtomicBool,
    progress: Arc<GridProgress>,
    outcome: OnceLock<Outcome>,
}

impl Job {
    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.get()
    }

    pub fn result(&self) -> Option<&JobResult> {
        match self.outcome.get()? {
            Outcome::Succeeded(r) => Some(r),
            Outcome::Failed { .. } => None,
        }
    }

    pub fn snapshot(&self) -> Value {
        match self.outcome.get() {
            Some(Outcome::Succeeded(r)) => r.snapshot.clone(),
            Some(Outcome::Failed { code, message }) => json!({
                "job_id": self.id,
                "status": "failed",
                "error": { "code": code, "message": message },
            }),
            None if self.running.load(Ordering::Acquire) => json!({
                "job_id": self.id,
                "status": "running",
                "progress": { "done": self.progress.snapshot().0, "total": self.settings },
            }),
            None => json!({
                "job_id": self.id,
                "status": "queued",
                "progress": { "done": 0, "total": self.settings },
            }),
        }
    }

    /// What a session shows once this job is over.
    pub fn session_outcome(&self) -> Option<Result<Value, Value>> {
        Some(match self.outcome.get()? {
            Outcome::Succeeded(r) => Ok(r.snapshot["result"].clone()),
            Outcome::Failed { code, message } => Err(json!({ "code": code, "message": message })),
        })
    }

    fn execute(&self, d: &Dataset, g: &GridSpec, workers: usize, cap: usize) -> Outcome {
        let opts = GridOptions {
            workers,
            cap,
            progress: Some(self.progress.clone()),
        };
        let report = match run_grid_search(d, g, self.seed, &opts) {
            Ok(r) => r,
            Err(e) => {
                return Outcome::Failed {
                    code: e.code().to_string(),
                    message: e.to_string(),
                }
            }
        };
        let provenance = format!(
            "Trained on an uploaded dataset ({} rows, label {:?}) by grid search over {} settings with seed {}; \
             validation AUC {:.4}.",
            d.n_rows(),
            d.label_column,
            report.settings.len(),
            self.seed,
            report.validation_auc
        );
        let artifact = ModelArtifact::new(
            None,
            report.best_setting.clone(),
            report.encoder.clone(),
            PredictorCatalog::from_encoder(&report.encoder),
            report.weights.clone(),
            provenance,
        );
        let model_bytes = match artifact.to_bytes() {
            Ok(b) => b,
            Err(e) => {
                return Outcome::Failed {
                    code: e.code().to_string(),
                    message: e.to_string(),
                }
            }
        };
        let roc_svg = plot_series(&report.validation_roc);
        let per_setting: Vec<Value> = report
            .per_setting_results
            .iter()
            .map(|r| json!({ "index": r.index, "mean_cv_auc": r.mean_cv_auc, "fold_aucs": r.fold_aucs }))
            .collect();
        let snapshot = json!({
            "job_id": self.id,
            "status": "succeeded",
            "progress": { "done": self.settings, "total": self.settings },
            "result": {
                "validation_auc": report.validation_auc,
                "validation_auc_text": format!("{:.3}", report.validation_auc),
                "best_cv_auc": report.best_cv_auc,
                "best_index": report.best_index,
                "best_setting": report.best_setting,
                "settings": report.settings.len(),
                "train_rows": report.train_rows,
                "validation_rows": report.validation_rows,
                "seed": self.seed,
                "per_setting": per_setting,
                "roc": report.validation_roc.points,
                "roc_svg": roc_svg,
                "roc_url": format!("/api/jobs/{}/roc.svg", self.id),
                "model_url": format!("/api/jobs/{}/model", self.id),
                "download_token": self.id,
            },
        });
        Outcome::Succeeded(Box::new(JobResult {
            report,
            roc_svg,
            model_bytes,
            snapshot,
        }))
    }
}

#[derive(Debug)]
pub struct JobManager {
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    permits: Arc<Semaphore>,
    waiting: Arc<AtomicUsize>,
    max_queued: usize,
    workers: usize,
    cap: usize,
}

impl JobManager {
    pub fn new(max_jobs: usize, max_queued: usize, workers: usize, cap: usize) -> Self {
        Self {
            jobs: RwLock::new(HashMap::new()),
            permits: Arc::new(Semaphore::new(max_jobs)),
            waiting: Arc::new(AtomicUsize::new(0)),
            max_queued,
            workers,
            cap,
        }
    }

    pub fn get(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.read().get(id).cloned()
    }

    /// Validate `grid` and queue a search over it. Must be called inside a
    /// tokio runtime.
    pub fn submit(&self, dataset: Arc<Dataset>, grid: GridSpec, seed: u64) -> Result<Arc<Job>, ApiError> {
        let settings = enumerate_settings(&grid, self.cap)
            .map_err(|e| ApiError::unprocessable(e.code(), e.to_string()))?
            .len();
        if self.waiting.fetch_add(1, Ordering::AcqRel) >= self.max_queued {
            self.waiting.fetch_sub(1, Ordering::AcqRel);
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "QueueFull",
                format!("{} training jobs are already waiting; try again later", self.max_queued),
            ));
        }
        let job = Arc::new(Job {
            id: uuid::Uuid::new_v4().simple().to_string(),
            settings,
            seed,
            running: AtomicBool::new(false),
            progress: GridProgress::new(),
            outcome: OnceLock::new(),
        });
        self.jobs.write().insert(job.id.clone(), job.clone());

        let permits = self.permits.clone();
        let (workers, cap) = (self.workers, self.cap);
        let task_job = job.clone();
        let waiting = self.waiting.clone();
        tokio::spawn(async move {
            let _permit = permits.acquire_owned().await.expect("job semaphore is never closed");
            waiting.fetch_sub(1, Ordering::AcqRel);
            task_job.running.store(true, Ordering::Release);
            let worker_job = task_job.clone();
            let outcome = tokio::task::spawn_blocking(move || worker_job.execute(&dataset, &grid, workers, cap))
                .await
                .unwrap_or_else(|e| Outcome::Failed {
                    code: "Internal".into(),
                    message: format!("training task failed: {e}"),
                });
            if let Outcome::Failed { code, message } = &outcome {
                tracing::warn!(job = %task_job.id, code, "training job failed: {message}");
            }
            let _ = task_job.outcome.set(outcome);
        });
        Ok(job)
    }
}
