//! The platform: registry, submissions, runner and leaderboard over one
//! data directory.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::aggregation::{build_leaderboard, LeaderboardEntry, RunSummary, SubmissionSummary, TaskSnapshot};
use crate::config::PlatformConfig;
use crate::evaluation::MetricResult;
use crate::layout::Layout;
use crate::preprocessing::{export_preprocessing_code, PreprocessError, PublicManifest};
use crate::registry::{NewDataset, PublicDescriptor, Registry, RegistryError};
use crate::runner::{RunRecord, RunStatus, Runner, RunnerError, WorkerPool};
use crate::store::{RecordKind, Store, StoreError};
use crate::submission::{is_valid_submission_id, validate_submission, Submission, SubmissionError, SubmissionStatus};
use crate::task::Task;

/// Coarse error classes, mapped one-to-one onto client-facing statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Invalid,
    NotFound,
    Conflict,
    TooLarge,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Submission(#[from] SubmissionError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("timed out waiting for submission `{0}`")]
    WaitTimeout(String),
}

impl PlatformError {
    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            PlatformError::Registry(e) => match e {
                RegistryError::InvalidId(_)
                | RegistryError::SchemaViolation { .. }
                | RegistryError::EmptyDataset
                | RegistryError::InvalidConfig(_) => Invalid,
                RegistryError::Preprocess(PreprocessError::Split(_))
                | RegistryError::Preprocess(PreprocessError::TestSingleClass)
                | RegistryError::Preprocess(PreprocessError::NoEvaluatedUsers) => Invalid,
                RegistryError::DuplicateId(_) => Conflict,
                RegistryError::NotFound(_) => NotFound,
                _ => Internal,
            },
            PlatformError::Submission(e) => match e {
                SubmissionError::MissingEntryFile
                | SubmissionError::MalformedArchive(_)
                | SubmissionError::InvalidAuthor
                | SubmissionError::NoDatasetsForTask(_) => Invalid,
                SubmissionError::ArchiveTooLarge { .. } => TooLarge,
                SubmissionError::NotFound(_) => NotFound,
                SubmissionError::InvalidState { .. } => Conflict,
            },
            PlatformError::Runner(e) => match e {
                RunnerError::NotFound(_) => NotFound,
                RunnerError::InvalidTransition { .. } => Conflict,
                RunnerError::Submission(s) => PlatformError::class_of_submission(s),
                _ => Internal,
            },
            PlatformError::Preprocess(PreprocessError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => NotFound,
            PlatformError::Store(StoreError::NotFound { .. }) => NotFound,
            PlatformError::Store(StoreError::ImmutableRecord { .. }) => Conflict,
            _ => Internal,
        }
    }

    fn class_of_submission(e: &SubmissionError) -> ErrorClass {
        match e {
            SubmissionError::NotFound(_) => ErrorClass::NotFound,
            SubmissionError::InvalidState { .. } => ErrorClass::Conflict,
            SubmissionError::ArchiveTooLarge { .. } => ErrorClass::TooLarge,
            _ => ErrorClass::Invalid,
        }
    }
}

pub type PlatformResult<T> = Result<T, PlatformError>;

/// A run together with its metrics, if it produced any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    #[serde(flatten)]
    pub run: RunRecord,
    pub result: Option<MetricResult<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionView {
    #[serde(flatten)]
    pub submission: Submission,
    /// Every dataset of the task has a succeeded run.
    pub eligible: bool,
    pub runs: Vec<RunView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitReceipt {
    pub submission_id: String,
    pub archive_checksum: String,
    pub run_ids: Vec<String>,
}

pub struct Platform {
    layout: Layout,
    store: Arc<Store>,
    registry: Registry,
    runner: Arc<Runner>,
    pool: Mutex<Option<WorkerPool>>,
    config: PlatformConfig,
}

impl Platform {
    /// Opens (or initializes) the data directory. No runs execute until
    /// [`Platform::start_workers`] is called or runs are driven inline.
    pub fn open(config: PlatformConfig) -> PlatformResult<Self> {
        config
            .validate()
            .map_err(|e| RegistryError::InvalidConfig(e.to_string()))?;
        let mut layout = Layout::new(&config.data_dir);
        if let Some(work) = &config.work_dir {
            layout = layout.with_work_dir(work);
        }
        let store = Arc::new(Store::open(layout.root())?);
        let registry = Registry::new(layout.clone(), store.clone());
        let runner = Arc::new(Runner::new(
            layout.clone(),
            store.clone(),
            config.limits.clone(),
            config.command.clone(),
        ));
        Ok(Platform {
            layout,
            store,
            registry,
            runner,
            pool: Mutex::new(None),
            config,
        })
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn runner(&self) -> &Arc<Runner> {
        &self.runner
    }

    /// Starts the worker pool, fails runs interrupted by a previous
    /// process and re-enqueues queued ones.
    pub fn start_workers(&self) -> PlatformResult<()> {
        let mut pool = self.pool.lock();
        if pool.is_some() {
            return Ok(());
        }
        let queued = self.runner.recover()?;
        let started = WorkerPool::start(self.runner.clone(), self.config.workers);
        for id in queued {
            started.enqueue(id);
        }
        *pool = Some(started);
        Ok(())
    }

    /// Stops accepting work and waits for queued runs to drain.
    pub fn shutdown(&self) {
        if let Some(pool) = self.pool.lock().take() {
            pool.shutdown();
        }
    }

    pub fn register_dataset(&self, new: NewDataset, raw: &[u8]) -> PlatformResult<PublicDescriptor> {
        let id = self.registry.register(new, raw)?;
        Ok(self.registry.get_dataset(&id)?)
    }

    pub fn get_dataset(&self, id: &str) -> PlatformResult<PublicDescriptor> {
        Ok(self.registry.get_dataset(id)?)
    }

    pub fn list_datasets(&self, task: Option<Task>) -> PlatformResult<Vec<PublicDescriptor>> {
        Ok(self.registry.list_datasets(task)?)
    }

    pub fn public_manifest(&self, id: &str) -> PlatformResult<PublicManifest> {
        self.registry.descriptor(id)?;
        Ok(self.registry.preprocessor().manifest(id)?)
    }

    pub fn public_bundle_archive(&self, id: &str) -> PlatformResult<Vec<u8>> {
        self.registry.descriptor(id)?;
        Ok(self.registry.preprocessor().public_bundle_archive(id)?)
    }

    pub fn export_preprocessing_code(&self, id: &str) -> PlatformResult<Vec<u8>> {
        let descriptor = self.registry.descriptor(id)?;
        let manifest = self.registry.preprocessor().manifest(id)?;
        Ok(export_preprocessing_code(&descriptor, &manifest)?)
    }

    /// Validates and stores a submission, then queues one run per dataset
    /// of its task. Runs go to the worker pool when it is running.
    pub fn submit(&self, archive: &[u8], task: Task, author: &str) -> PlatformResult<SubmitReceipt> {
        let datasets = self.registry.dataset_ids(task)?;
        if datasets.is_empty() {
            return Err(SubmissionError::NoDatasetsForTask(task).into());
        }
        let submission = validate_submission(archive, task, author, self.config.archive_cap)?;
        let checksum = self.store.put_archive(archive)?;
        debug_assert_eq!(checksum, submission.archive_checksum);
        self.store
            .put_json(RecordKind::Submission, &submission.submission_id, &submission)?;
        let run_ids = self.runner.schedule_task_runs(&submission.submission_id, &datasets)?;
        if let Some(pool) = self.pool.lock().as_ref() {
            for id in &run_ids {
                pool.enqueue(id.clone());
            }
        }
        tracing::info!(submission = %submission.submission_id, %task, runs = run_ids.len(), "submission accepted");
        Ok(SubmitReceipt {
            submission_id: submission.submission_id,
            archive_checksum: checksum,
            run_ids,
        })
    }

    /// Executes the given queued runs on the calling thread.
    pub fn execute_inline(&self, run_ids: &[String]) -> PlatformResult<Vec<RunRecord>> {
        run_ids
            .iter()
            .map(|id| self.runner.execute(id).map_err(PlatformError::from))
            .collect()
    }

    fn load_submission(&self, id: &str) -> PlatformResult<Submission> {
        if !is_valid_submission_id(id) {
            return Err(SubmissionError::NotFound(id.to_string()).into());
        }
        match self.store.get_json(RecordKind::Submission, id) {
            Err(StoreError::NotFound { .. }) => Err(SubmissionError::NotFound(id.to_string()).into()),
            other => Ok(other?),
        }
    }

    fn result_of(&self, run: &RunRecord) -> PlatformResult<Option<MetricResult<f64>>> {
        if run.status != RunStatus::Succeeded {
            return Ok(None);
        }
        match self.store.get_json(RecordKind::Result, &run.run_id) {
            Ok(m) => Ok(Some(m)),
            Err(StoreError::NotFound { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn get_submission(&self, id: &str) -> PlatformResult<SubmissionView> {
        let submission = self.load_submission(id)?;
        let datasets = self.registry.dataset_ids(submission.task)?;
        let mut runs = Vec::new();
        for run in self.runner.runs_of(id)? {
            let result = self.result_of(&run)?;
            runs.push(RunView { run, result });
        }
        let eligible = !datasets.is_empty()
            && datasets.iter().all(|d| {
                runs.iter()
                    .any(|r| &r.run.dataset_id == d && r.run.status == RunStatus::Succeeded && r.result.is_some())
            });
        Ok(SubmissionView {
            submission,
            eligible,
            runs,
        })
    }

    pub fn list_submissions(&self, task: Option<Task>) -> PlatformResult<Vec<Submission>> {
        let mut subs: Vec<Submission> = self
            .store
            .list_filtered(RecordKind::Submission, |s: &Submission| task.is_none_or(|t| s.task == t))?;
        subs.sort_by(|a, b| a.submitted_at.cmp(&b.submitted_at).then_with(|| a.submission_id.cmp(&b.submission_id)));
        Ok(subs)
    }

    pub fn get_run(&self, run_id: &str) -> PlatformResult<RunView> {
        let run = self.runner.get_run(run_id)?;
        let result = self.result_of(&run)?;
        Ok(RunView { run, result })
    }

    pub fn run_logs(&self, run_id: &str) -> PlatformResult<String> {
        Ok(self.runner.get_run_logs(run_id)?)
    }

    /// The archive exactly as uploaded, with its checksum.
    pub fn fetch_code_archive(&self, submission_id: &str) -> PlatformResult<(Vec<u8>, String)> {
        let submission = self.load_submission(submission_id)?;
        let bytes = self.store.get_archive(&submission.archive_checksum)?;
        Ok((bytes, submission.archive_checksum))
    }

    /// Current standings for one task, recomputed from stored records.
    pub fn leaderboard(&self, task: Task) -> PlatformResult<Vec<LeaderboardEntry<f64>>> {
        let datasets = self.registry.dataset_ids(task)?;
        let mut runs_by_sub: BTreeMap<String, BTreeMap<String, RunSummary<f64>>> = BTreeMap::new();
        for run in self.store.list_filtered(RecordKind::Run, |r: &RunRecord| r.task == task)? {
            let metrics = self.result_of(&run)?;
            runs_by_sub.entry(run.submission_id.clone()).or_default().insert(
                run.dataset_id.clone(),
                RunSummary {
                    succeeded: run.status == RunStatus::Succeeded,
                    wall_clock_seconds: run.wall_clock_seconds,
                    metrics,
                },
            );
        }
        let submissions = self
            .list_submissions(Some(task))?
            .into_iter()
            .map(|s| SubmissionSummary {
                runs: runs_by_sub.remove(&s.submission_id).unwrap_or_default(),
                submission_id: s.submission_id,
                author: s.author,
                submitted_at: s.submitted_at,
            })
            .collect();
        Ok(build_leaderboard(&TaskSnapshot {
            task,
            datasets,
            submissions,
        }))
    }

    /// Blocks until the submission has left `Pending`/`Running`.
    pub fn wait_for_submission(&self, id: &str, timeout: Duration) -> PlatformResult<SubmissionView> {
        let deadline = Instant::now() + timeout;
        loop {
            let view = self.get_submission(id)?;
            if matches!(view.submission.status, SubmissionStatus::Completed | SubmissionStatus::Failed) {
                return Ok(view);
            }
            if Instant::now() >= deadline {
                return Err(PlatformError::WaitTimeout(id.to_string()));
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }
}
