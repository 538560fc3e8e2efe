//! Per-dataset execution of submissions.
//!
//! A submission fans out into one run per dataset of its task. Each run
//! extracts the archive into a fresh working directory, copies the public
//! bundle next to it, and launches the entry file as
//!
//! ```text
//! <command-template> main.py --task <ctr|topn> --train <abs> --valid <abs> \
//!     --test-input <abs> --output <abs>
//! ```
//!
//! The measured wall-clock time covers the whole process lifetime, so it
//! includes any hyperparameter search the submission performs.

pub mod sandbox;

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use crossbeam_channel::{Receiver, Sender};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::archive::extract_zip;
use crate::digest::{sha256_hex, write_atomic};
use crate::evaluation::{self, CtrTruth, EvalError, MetricResult, TopNTruth, Truth};
use crate::layout::Layout;
use crate::preprocessing::{TEST_INPUT_FILE, TRAIN_FILE, VALID_FILE};
use crate::registry::{ColumnSchema, DatasetDescriptor};
use crate::store::{RecordKind, Store, StoreError};
use crate::submission::{Submission, SubmissionError, SubmissionStatus, ENTRY_FILE};
use crate::task::Task;
use sandbox::{ExitKind, LaunchSpec};

/// Slack allowed between the wall timeout and the recorded runtime of a
/// killed run.
pub const TIMEOUT_GRACE: Duration = Duration::from_secs(1);
pub const DEFAULT_WALL_TIMEOUT: Duration = Duration::from_secs(3600);
pub const DEFAULT_MEMORY_BYTES: u64 = 8 * 1024 * 1024 * 1024;
pub const DEFAULT_MAX_OUTPUT_BYTES: u64 = 1024 * 1024 * 1024;
pub const DEFAULT_LOG_BOUND: usize = 64 * 1024;
/// Length of the log tail copied into each [`RunRecord`].
pub const LOG_EXCERPT_BYTES: usize = 2048;
pub const DEFAULT_COMMAND_TEMPLATE: &str = "python3 {entry}";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const LOG_FILE: &str = "log.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
    Timeout,
    OutputInvalid,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, RunStatus::Queued | RunStatus::Running)
    }

    /// Queued -> Running -> one terminal state. Nothing leaves a terminal state.
    pub fn can_transition_to(self, next: RunStatus) -> bool {
        match self {
            RunStatus::Queued => next == RunStatus::Running,
            RunStatus::Running => next.is_terminal(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub submission_id: String,
    pub dataset_id: String,
    pub task: Task,
    pub status: RunStatus,
    pub wall_clock_seconds: f64,
    pub exit_code: Option<i32>,
    pub log_excerpt: String,
    pub prediction_checksum: Option<String>,
    /// Platform-side explanation for non-success outcomes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub queued_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl RunRecord {
    pub fn queued(submission: &Submission, dataset_id: &str) -> Self {
        RunRecord {
            run_id: run_id(&submission.submission_id, dataset_id),
            submission_id: submission.submission_id.clone(),
            dataset_id: dataset_id.to_string(),
            task: submission.task,
            status: RunStatus::Queued,
            wall_clock_seconds: 0.0,
            exit_code: None,
            log_excerpt: String::new(),
            prediction_checksum: None,
            detail: None,
            queued_at: Utc::now(),
            started_at: None,
            finished_at: None,
        }
    }

    pub fn transition(&mut self, next: RunStatus) -> Result<(), RunnerError> {
        if !self.status.can_transition_to(next) {
            return Err(RunnerError::InvalidTransition {
                run_id: self.run_id.clone(),
                from: self.status,
                to: next,
            });
        }
        self.status = next;
        match next {
            RunStatus::Running => self.started_at = Some(Utc::now()),
            s if s.is_terminal() => self.finished_at = Some(Utc::now()),
            _ => {}
        }
        Ok(())
    }
}

pub fn run_id(submission_id: &str, dataset_id: &str) -> String {
    format!("{submission_id}.{dataset_id}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkPolicy {
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxLimits {
    pub wall_timeout: Duration,
    /// Address-space cap per process.
    pub memory_bytes: u64,
    /// Largest file a run may write, including its predictions.
    pub max_output_bytes: u64,
    /// Cap on captured stdout+stderr.
    pub log_bound_bytes: usize,
    pub network: NetworkPolicy,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        SandboxLimits {
            wall_timeout: DEFAULT_WALL_TIMEOUT,
            memory_bytes: DEFAULT_MEMORY_BYTES,
            max_output_bytes: DEFAULT_MAX_OUTPUT_BYTES,
            log_bound_bytes: DEFAULT_LOG_BOUND,
            network: NetworkPolicy::Disabled,
        }
    }
}

impl SandboxLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.wall_timeout.is_zero() {
            return Err("wall timeout must be positive".into());
        }
        if self.memory_bytes == 0 || self.max_output_bytes == 0 {
            return Err("memory and output caps must be positive".into());
        }
        if self.log_bound_bytes < LiveLog::MIN_BOUND {
            return Err(format!("log bound must be at least {} bytes", LiveLog::MIN_BOUND));
        }
        Ok(())
    }
}

/// Combined output of a running process, capped at a fixed size.
///
/// Readers may take snapshots at any time and always see a prefix of the
/// final log.
#[derive(Debug)]
pub struct LiveLog {
    bound: usize,
    inner: Mutex<LogBuffer>,
}

#[derive(Debug, Default)]
struct LogBuffer {
    data: Vec<u8>,
    dropped: u64,
}

impl LiveLog {
    /// Bytes reserved at the end of the bound for the truncation marker.
    const MARKER_RESERVE: usize = 64;
    pub const MIN_BOUND: usize = 2 * Self::MARKER_RESERVE;

    pub fn new(bound: usize) -> Self {
        LiveLog {
            bound: bound.max(Self::MIN_BOUND),
            inner: Mutex::new(LogBuffer::default()),
        }
    }

    pub fn append(&self, bytes: &[u8]) {
        let mut buf = self.inner.lock();
        let room = (self.bound - Self::MARKER_RESERVE).saturating_sub(buf.data.len());
        let take = room.min(bytes.len());
        buf.data.extend_from_slice(&bytes[..take]);
        buf.dropped += (bytes.len() - take) as u64;
    }

    pub fn snapshot(&self) -> String {
        let buf = self.inner.lock();
        let mut text = String::from_utf8_lossy(&buf.data).into_owned();
        if buf.dropped > 0 {
            text.push_str(&format!("\n[output truncated: {} bytes dropped]\n", buf.dropped));
        }
        text
    }
}

fn tail(text: &str, max_bytes: usize) -> String {
    if text.len() <= max_bytes {
        return text.to_string();
    }
    let mut start = text.len() - max_bytes;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_string()
}

/// Launch command for the entry file; `{entry}` is replaced by `main.py`,
/// or the entry is appended when the placeholder is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTemplate(Vec<String>);

impl CommandTemplate {
    pub fn parse(template: &str) -> Result<Self, String> {
        let words: Vec<String> = template.split_whitespace().map(str::to_string).collect();
        if words.is_empty() || words[0] == "{entry}" {
            return Err(format!("command template `{template}` names no program"));
        }
        Ok(CommandTemplate(words))
    }

    pub fn expand(&self, entry: &str) -> (String, Vec<String>) {
        let mut args: Vec<String> = self.0[1..].iter().map(|w| w.replace("{entry}", entry)).collect();
        if !self.0.iter().any(|w| w.contains("{entry}")) {
            args.push(entry.to_string());
        }
        (self.0[0].clone(), args)
    }
}

impl Default for CommandTemplate {
    fn default() -> Self {
        CommandTemplate::parse(DEFAULT_COMMAND_TEMPLATE).expect("default template parses")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("run `{0}` not found")]
    NotFound(String),
    #[error("run `{run_id}` cannot move from {from:?} to {to:?}")]
    InvalidTransition {
        run_id: String,
        from: RunStatus,
        to: RunStatus,
    },
    #[error(transparent)]
    Submission(#[from] SubmissionError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Executes runs and owns their records.
pub struct Runner {
    layout: Layout,
    store: Arc<Store>,
    limits: SandboxLimits,
    command: CommandTemplate,
    live: Mutex<HashMap<String, Arc<LiveLog>>>,
    /// Serializes read-modify-write cycles over submission and run records.
    state: Mutex<()>,
}

struct Execution {
    status: RunStatus,
    wall_clock_seconds: f64,
    exit_code: Option<i32>,
    detail: Option<String>,
    predictions: Option<Vec<u8>>,
    metrics: Option<MetricResult<f64>>,
}

impl Execution {
    fn failed(detail: String) -> Self {
        Execution {
            status: RunStatus::Failed,
            wall_clock_seconds: 0.0,
            exit_code: None,
            detail: Some(detail),
            predictions: None,
            metrics: None,
        }
    }
}

impl Runner {
    pub fn new(layout: Layout, store: Arc<Store>, limits: SandboxLimits, command: CommandTemplate) -> Self {
        Runner {
            layout,
            store,
            limits,
            command,
            live: Mutex::new(HashMap::new()),
            state: Mutex::new(()),
        }
    }

    pub fn limits(&self) -> &SandboxLimits {
        &self.limits
    }

    pub fn get_run(&self, run_id: &str) -> Result<RunRecord, RunnerError> {
        match self.store.get_json(RecordKind::Run, run_id) {
            Err(StoreError::NotFound { .. }) | Err(StoreError::InvalidKey(_)) => {
                Err(RunnerError::NotFound(run_id.to_string()))
            }
            other => Ok(other?),
        }
    }

    pub fn runs_of(&self, submission_id: &str) -> Result<Vec<RunRecord>, RunnerError> {
        Ok(self
            .store
            .list_filtered(RecordKind::Run, |r: &RunRecord| r.submission_id == submission_id)?)
    }

    fn load_submission(&self, id: &str) -> Result<Submission, RunnerError> {
        match self.store.get_json(RecordKind::Submission, id) {
            Err(StoreError::NotFound { .. }) | Err(StoreError::InvalidKey(_)) => {
                Err(SubmissionError::NotFound(id.to_string()).into())
            }
            other => Ok(other?),
        }
    }

    /// Creates one queued run per dataset and marks the submission running.
    pub fn schedule_task_runs(&self, submission_id: &str, dataset_ids: &[String]) -> Result<Vec<String>, RunnerError> {
        let _guard = self.state.lock();
        let mut submission = self.load_submission(submission_id)?;
        if submission.status != SubmissionStatus::Pending {
            return Err(SubmissionError::InvalidState {
                id: submission_id.to_string(),
                status: submission.status,
                action: "schedule runs",
            }
            .into());
        }
        if dataset_ids.is_empty() {
            return Err(SubmissionError::NoDatasetsForTask(submission.task).into());
        }
        let runs: Vec<RunRecord> = dataset_ids.iter().map(|d| RunRecord::queued(&submission, d)).collect();
        submission.status = SubmissionStatus::Running;
        let mut writes = Vec::with_capacity(runs.len() + 1);
        for run in &runs {
            writes.push((RecordKind::Run, run.run_id.as_str(), serde_json::to_vec_pretty(run).map_err(StoreError::from)?));
        }
        writes.push((
            RecordKind::Submission,
            submission_id,
            serde_json::to_vec_pretty(&submission).map_err(StoreError::from)?,
        ));
        self.store.transaction(&writes)?;
        Ok(runs.into_iter().map(|r| r.run_id).collect())
    }

    /// Captured output of a run: live while it executes, from disk after.
    pub fn get_run_logs(&self, run_id: &str) -> Result<String, RunnerError> {
        self.get_run(run_id)?;
        if let Some(log) = self.live.lock().get(run_id) {
            return Ok(log.snapshot());
        }
        match fs::read(self.layout.run_dir(run_id).join(LOG_FILE)) {
            Ok(bytes) => Ok(String::from_utf8_lossy(&bytes).into_owned()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(e.into()),
        }
    }

    /// Stored predictions of a succeeded run.
    pub fn predictions(&self, run_id: &str) -> Result<Option<Vec<u8>>, RunnerError> {
        self.get_run(run_id)?;
        match fs::read(self.layout.run_dir(run_id).join(PREDICTIONS_FILE)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Executes a queued run to completion with the runner's own limits.
    pub fn execute(&self, run_id: &str) -> Result<RunRecord, RunnerError> {
        let limits = self.limits.clone();
        self.execute_run(run_id, &limits)
    }

    /// Executes a queued run to completion and records the outcome.
    ///
    /// User-code failures become terminal statuses, not errors. An `Err`
    /// is returned only when the run cannot be started (unknown id, wrong
    /// state) or its record cannot be written.
    pub fn execute_run(&self, run_id: &str, limits: &SandboxLimits) -> Result<RunRecord, RunnerError> {
        let mut run = {
            let _guard = self.state.lock();
            let mut run = self.get_run(run_id)?;
            run.transition(RunStatus::Running)?;
            self.store.put_json(RecordKind::Run, run_id, &run)?;
            run
        };
        let log = Arc::new(LiveLog::new(limits.log_bound_bytes));
        self.live.lock().insert(run_id.to_string(), log.clone());

        let execution = self.execute_in_sandbox(&run, limits, &log).unwrap_or_else(|e| {
            tracing::error!(run = run_id, error = %e, "run setup failed");
            Execution::failed(format!("platform error: {e}"))
        });

        let log_text = log.snapshot();
        let run_dir = self.layout.run_dir(run_id);
        write_atomic(&run_dir.join(LOG_FILE), log_text.as_bytes())?;
        if let Some(pred) = &execution.predictions {
            write_atomic(&run_dir.join(PREDICTIONS_FILE), pred)?;
        }

        run.transition(execution.status)?;
        run.wall_clock_seconds = execution.wall_clock_seconds;
        run.exit_code = execution.exit_code;
        run.detail = execution.detail;
        run.log_excerpt = tail(&log_text, LOG_EXCERPT_BYTES);
        run.prediction_checksum = execution.predictions.as_deref().map(sha256_hex);
        let metrics = execution.metrics.map(|mut m| {
            m.run_id = Some(run_id.to_string());
            m
        });
        self.finish(&run, metrics.as_ref())?;
        self.live.lock().remove(run_id);
        tracing::info!(run = run_id, status = ?run.status, secs = run.wall_clock_seconds, "run finished");
        Ok(run)
    }

    /// Writes the terminal run, its metrics and, when it was the last run
    /// of its submission, the completed submission, as one transaction.
    fn finish(&self, run: &RunRecord, metrics: Option<&MetricResult<f64>>) -> Result<(), RunnerError> {
        let _guard = self.state.lock();
        let mut writes = vec![(
            RecordKind::Run,
            run.run_id.as_str(),
            serde_json::to_vec_pretty(run).map_err(StoreError::from)?,
        )];
        if let Some(m) = metrics {
            writes.push((
                RecordKind::Result,
                run.run_id.as_str(),
                serde_json::to_vec_pretty(m).map_err(StoreError::from)?,
            ));
        }
        let others_done = self
            .runs_of(&run.submission_id)?
            .iter()
            .filter(|r| r.run_id != run.run_id)
            .all(|r| r.status.is_terminal());
        if others_done {
            let mut submission = self.load_submission(&run.submission_id)?;
            if submission.status == SubmissionStatus::Running {
                submission.status = SubmissionStatus::Completed;
                writes.push((
                    RecordKind::Submission,
                    run.submission_id.as_str(),
                    serde_json::to_vec_pretty(&submission).map_err(StoreError::from)?,
                ));
            }
        }
        self.store.transaction(&writes)?;
        Ok(())
    }

    fn load_truth(&self, descriptor: &DatasetDescriptor) -> Result<Truth, RunnerError> {
        let bytes = fs::read(self.layout.hidden_test(&descriptor.dataset_id))?;
        let truth = match &descriptor.schema {
            ColumnSchema::Ctr { label, .. } => CtrTruth::from_csv(bytes.as_slice(), label).map(Truth::Ctr),
            ColumnSchema::TopN { user, item, .. } => {
                TopNTruth::from_csv(bytes.as_slice(), user, item).map(Truth::TopN)
            }
        };
        truth.map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()).into())
    }

    fn execute_in_sandbox(&self, run: &RunRecord, limits: &SandboxLimits, log: &Arc<LiveLog>) -> Result<Execution, RunnerError> {
        let submission = self.load_submission(&run.submission_id)?;
        let descriptor: DatasetDescriptor = self.store.get_json(RecordKind::Dataset, &run.dataset_id)?;
        let archive = self.store.get_archive(&submission.archive_checksum)?;

        let work = self
            .layout
            .work_root()
            .join(format!("{}-{}", run.run_id, uuid::Uuid::new_v4().simple()));
        let result = self.run_in(&work, run, &archive, &descriptor, limits, log);
        if let Err(e) = fs::remove_dir_all(&work) {
            tracing::warn!(dir = %work.display(), error = %e, "could not remove run directory");
        }
        result
    }

    fn run_in(
        &self,
        work: &Path,
        run: &RunRecord,
        archive: &[u8],
        descriptor: &DatasetDescriptor,
        limits: &SandboxLimits,
        log: &Arc<LiveLog>,
    ) -> Result<Execution, RunnerError> {
        let (code, input, output, tmp) = (work.join("code"), work.join("input"), work.join("output"), work.join("tmp"));
        for dir in [&code, &input, &output, &tmp] {
            fs::create_dir_all(dir)?;
        }
        extract_zip(archive, &code, crate::submission::DEFAULT_ARCHIVE_CAP.max(limits.max_output_bytes))
            .map_err(|e| io::Error::other(e.to_string()))?;
        let public = self.layout.public_dir(&run.dataset_id);
        for name in [TRAIN_FILE, VALID_FILE, TEST_INPUT_FILE] {
            fs::copy(public.join(name), input.join(name))?;
        }
        let prediction_path = output.join(PREDICTIONS_FILE);

        let (program, mut args) = self.command.expand(ENTRY_FILE);
        let path_arg = |p: &Path| p.to_string_lossy().into_owned();
        args.extend([
            "--task".into(),
            run.task.to_string(),
            "--train".into(),
            path_arg(&input.join(TRAIN_FILE)),
            "--valid".into(),
            path_arg(&input.join(VALID_FILE)),
            "--test-input".into(),
            path_arg(&input.join(TEST_INPUT_FILE)),
            "--output".into(),
            path_arg(&prediction_path),
        ]);
        let spec = LaunchSpec {
            program,
            args,
            cwd: code.clone(),
            env: vec![
                ("PATH".into(), "/usr/local/bin:/usr/bin:/bin".into()),
                ("HOME".into(), path_arg(work)),
                ("TMPDIR".into(), path_arg(&tmp)),
                ("LANG".into(), "C.UTF-8".into()),
                ("PYTHONHASHSEED".into(), "0".into()),
                ("PYTHONDONTWRITEBYTECODE".into(), "1".into()),
                ("PYTHONUNBUFFERED".into(), "1".into()),
            ],
        };

        // One retry when the process cannot be started at all.
        let outcome = match sandbox::run(&spec, limits, log.clone()) {
            Ok(o) => o,
            Err(first) => {
                tracing::warn!(run = %run.run_id, error = %first, "spawn failed, retrying once");
                match sandbox::run(&spec, limits, log.clone()) {
                    Ok(o) => o,
                    Err(second) => return Ok(Execution::failed(format!("could not start process: {second}"))),
                }
            }
        };

        let wall_clock_seconds = outcome.wall_clock.as_secs_f64();
        let mut exec = Execution {
            status: RunStatus::Failed,
            wall_clock_seconds,
            exit_code: None,
            detail: None,
            predictions: None,
            metrics: None,
        };
        match outcome.exit {
            ExitKind::TimedOut => {
                exec.status = RunStatus::Timeout;
                exec.detail = Some(format!("killed after {}s wall-clock limit", limits.wall_timeout.as_secs_f64()));
            }
            ExitKind::Signaled(sig) => {
                exec.detail = Some(format!("terminated by signal {sig}"));
            }
            ExitKind::Exited(code) if code != 0 => {
                exec.exit_code = Some(code);
                exec.detail = Some(format!("exited with code {code}"));
            }
            ExitKind::Exited(code) => {
                exec.exit_code = Some(code);
                match self.check_output(&prediction_path, descriptor, limits)? {
                    Ok((bytes, metrics)) => {
                        exec.status = RunStatus::Succeeded;
                        exec.predictions = Some(bytes);
                        exec.metrics = Some(metrics);
                    }
                    Err(reason) => {
                        exec.status = RunStatus::OutputInvalid;
                        exec.detail = Some(reason);
                    }
                }
            }
        }
        Ok(exec)
    }

    /// Validates and scores the prediction file. The inner `Err` carries
    /// the reason a file is rejected.
    #[allow(clippy::type_complexity)]
    fn check_output(
        &self,
        path: &Path,
        descriptor: &DatasetDescriptor,
        limits: &SandboxLimits,
    ) -> Result<Result<(Vec<u8>, MetricResult<f64>), String>, RunnerError> {
        let meta = match fs::symlink_metadata(path) {
            Ok(m) => m,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Ok(Err("no prediction file was written to --output".into()))
            }
            Err(e) => return Err(e.into()),
        };
        if !meta.is_file() {
            return Ok(Err("--output is not a regular file".into()));
        }
        if meta.len() > limits.max_output_bytes {
            return Ok(Err(format!("prediction file exceeds {} bytes", limits.max_output_bytes)));
        }
        let bytes = fs::read(path)?;
        let truth = self.load_truth(descriptor)?;
        match evaluation::evaluate::<f64>(descriptor.task, &bytes, &truth) {
            Ok(metrics) => Ok(Ok((bytes, metrics))),
            Err(EvalError::OutputInvalid(reason)) => Ok(Err(reason)),
            Err(other) => Err(io::Error::other(format!("evaluation failed: {other}")).into()),
        }
    }

    /// Fails runs left `Running` by a previous process and returns the ids
    /// of runs still queued, in queue order, so they can be re-enqueued.
    pub fn recover(&self) -> Result<Vec<String>, RunnerError> {
        let mut queued: Vec<RunRecord> = Vec::new();
        for mut run in self.store.list_json::<RunRecord>(RecordKind::Run)? {
            match run.status {
                RunStatus::Queued => queued.push(run),
                RunStatus::Running => {
                    run.transition(RunStatus::Failed)?;
                    run.detail = Some("interrupted by a platform restart".into());
                    self.finish(&run, None)?;
                }
                _ => {}
            }
        }
        queued.sort_by(|a, b| a.queued_at.cmp(&b.queued_at).then_with(|| a.run_id.cmp(&b.run_id)));
        Ok(queued.into_iter().map(|r| r.run_id).collect())
    }
}

/// Fixed-size pool of worker threads draining a FIFO run queue.
pub struct WorkerPool {
    sender: Option<Sender<String>>,
    handles: Vec<thread::JoinHandle<()>>,
}

impl WorkerPool {
    pub fn start(runner: Arc<Runner>, workers: usize) -> Self {
        let (sender, receiver): (Sender<String>, Receiver<String>) = crossbeam_channel::unbounded();
        let handles = (0..workers.max(1))
            .map(|i| {
                let (runner, receiver) = (runner.clone(), receiver.clone());
                thread::Builder::new()
                    .name(format!("rboard-worker-{i}"))
                    .spawn(move || {
                        for run_id in receiver.iter() {
                            if let Err(e) = runner.execute(&run_id) {
                                tracing::error!(run = %run_id, error = %e, "run could not be executed");
                            }
                        }
                    })
                    .expect("spawn worker thread")
            })
            .collect();
        WorkerPool {
            sender: Some(sender),
            handles,
        }
    }

    pub fn enqueue(&self, run_id: impl Into<String>) {
        if let Some(tx) = &self.sender {
            // Workers only stop after the sender is dropped, so this cannot fail.
            let _ = tx.send(run_id.into());
        }
    }

    /// Runs already queued are drained before the workers exit.
    pub fn shutdown(mut self) {
        self.sender.take();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.sender.take();
    }
}

/// Default pool size: half the available cores, at least one.
pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| (n.get() / 2).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_machine() {
        use RunStatus::*;
        assert!(Queued.can_transition_to(Running));
        assert!(!Queued.can_transition_to(Succeeded));
        for t in [Succeeded, Failed, Timeout, OutputInvalid] {
            assert!(Running.can_transition_to(t));
            for next in [Queued, Running, Succeeded, Failed, Timeout, OutputInvalid] {
                assert!(!t.can_transition_to(next));
            }
        }
    }

    #[test]
    fn live_log_is_bounded_with_marker() {
        let log = LiveLog::new(64 * 1024);
        let chunk = vec![b'x'; 8192];
        for _ in 0..(10 * 128) {
            log.append(&chunk);
        }
        let text = log.snapshot();
        assert!(text.len() <= 64 * 1024);
        assert!(text.contains("[output truncated:"));
        let small = LiveLog::new(1024);
        small.append(b"hello\n");
        assert_eq!(small.snapshot(), "hello\n");
    }

    #[test]
    fn command_template_expansion() {
        let t = CommandTemplate::default();
        assert_eq!(t.expand("main.py"), ("python3".to_string(), vec!["main.py".to_string()]));
        let t = CommandTemplate::parse("python3 -I -u").unwrap();
        assert_eq!(t.expand("main.py").1, ["-I", "-u", "main.py"]);
        assert!(CommandTemplate::parse("  ").is_err());
    }

    #[test]
    fn limits_validation() {
        assert!(SandboxLimits::default().validate().is_ok());
        let zero = SandboxLimits {
            wall_timeout: Duration::ZERO,
            ..SandboxLimits::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn tail_respects_char_boundaries() {
        assert_eq!(tail("abc", 10), "abc");
        assert_eq!(tail("aé", 1), "");
        assert_eq!(tail("hello", 2), "lo");
    }
}
