//! Job validation and enqueueing, the pulling worker pool and job queries.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ppm_core::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::Cache;
use crate::pipeline::{Outcome, Pipeline, Stage};
use crate::store::{now, ModelRecord, ReportRecord, Store};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Created,
    Queued,
    Running,
    Completed,
    Error,
}

impl JobStatus {
    pub fn name(self) -> &'static str {
        match self {
            JobStatus::Created => "created",
            JobStatus::Queued => "queued",
            JobStatus::Running => "running",
            JobStatus::Completed => "completed",
            JobStatus::Error => "error",
        }
    }

    /// Allowed moves: created → queued → running → completed | error.
    pub fn may_follow(self, previous: JobStatus) -> bool {
        matches!(
            (previous, self),
            (JobStatus::Created, JobStatus::Queued)
                | (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Running, JobStatus::Completed)
                | (JobStatus::Running, JobStatus::Error)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Completed | JobStatus::Error)
    }
}

impl FromStr for JobStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [JobStatus::Created, JobStatus::Queued, JobStatus::Running, JobStatus::Completed, JobStatus::Error]
            .into_iter()
            .find(|j| j.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown job status `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub status: JobStatus,
    pub at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRef {
    pub model_fingerprint: String,
    pub report_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub seq: u64,
    pub status: JobStatus,
    pub task_identity: String,
    pub config: PipelineConfig,
    #[serde(default)]
    pub result: Option<ResultRef>,
    #[serde(default)]
    pub error_detail: Option<ErrorDetail>,
    pub transitions: Vec<Transition>,
}

impl JobRecord {
    fn advance(&mut self, status: JobStatus) -> Result<()> {
        if !status.may_follow(self.status) {
            return Err(Error::Conflict(format!("job {}: {} cannot follow {}", self.id, status.name(), self.status.name())));
        }
        self.status = status;
        self.transitions.push(Transition { status, at: now() });
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobFilter {
    pub status: Option<JobStatus>,
    pub split_key: Option<String>,
    pub algorithm: Option<String>,
    pub encoding: Option<String>,
    pub label: Option<String>,
}

impl JobFilter {
    pub fn matches(&self, job: &JobRecord) -> bool {
        let eq = |want: &Option<String>, have: &str| want.as_deref().is_none_or(|w| w == have);
        self.status.is_none_or(|s| s == job.status)
            && eq(&self.split_key, &job.config.split_key)
            && eq(&self.algorithm, job.config.model.algorithm.name())
            && eq(&self.encoding, &job.config.encoding_label())
            && eq(&self.label, &job.config.label.kind.name())
    }
}

/// What a stage hook asks the worker to do.
#[derive(Debug, Clone, PartialEq)]
pub enum HookAction {
    Continue,
    /// The worker dies on the spot, as if its process had been killed.
    Kill,
    /// The pipeline fails with a panic, which the worker must survive.
    Panic(String),
}

pub type StageHook = Arc<dyn Fn(&str, Stage) -> HookAction + Send + Sync>;

/// Unwind payload of a worker killed mid-job.
struct WorkerKilled;

#[derive(Default)]
struct Queue {
    items: Mutex<VecDeque<String>>,
    ready: Condvar,
}

impl Queue {
    fn push(&self, id: String) {
        self.items.lock().unwrap().push_back(id);
        self.ready.notify_one();
    }

    /// Pops and marks the worker busy under one lock, so the queue and the
    /// busy count never both read empty while a job is in hand.
    fn pop(&self, wait: Duration, busy: &AtomicUsize) -> Option<String> {
        let items = self.items.lock().unwrap();
        let (mut items, _) = self.ready.wait_timeout_while(items, wait, |q| q.is_empty()).unwrap();
        let id = items.pop_front()?;
        busy.fetch_add(1, Ordering::SeqCst);
        Some(id)
    }

    fn len(&self) -> usize {
        self.items.lock().unwrap().len()
    }
}

#[derive(Default)]
struct WorkerState {
    kill: AtomicBool,
    /// Job in hand, if any.
    current: Mutex<Option<String>>,
}

struct WorkerSlot {
    handle: Option<JoinHandle<()>>,
    state: Arc<WorkerState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStatus {
    pub workers: usize,
    pub alive: usize,
    pub busy: usize,
    pub queued: usize,
    pub respawns: u64,
}

pub struct Orchestrator {
    store: Arc<Store>,
    cache: Arc<Cache>,
    queue: Queue,
    next_seq: AtomicU64,
    executions: Mutex<HashMap<String, u32>>,
    busy: AtomicUsize,
    workers: Mutex<Vec<WorkerSlot>>,
    supervisor: Mutex<Option<JoinHandle<()>>>,
    shutdown: AtomicBool,
    respawns: AtomicU64,
    hook: RwLock<Option<StageHook>>,
}

const POLL: Duration = Duration::from_millis(50);

impl Orchestrator {
    /// Restores the queue from the store. Jobs left running by a previous
    /// process are closed as errors; queued ones are re-enqueued in order.
    pub fn new(store: Arc<Store>, cache: Arc<Cache>) -> Result<Arc<Self>> {
        let mut jobs = store.jobs.list();
        jobs.sort_by_key(|j| j.seq);
        let orch = Arc::new(Orchestrator {
            next_seq: AtomicU64::new(jobs.last().map_or(1, |j| j.seq + 1)),
            store,
            cache,
            queue: Queue::default(),
            executions: Mutex::new(HashMap::new()),
            busy: AtomicUsize::new(0),
            workers: Mutex::new(Vec::new()),
            supervisor: Mutex::new(None),
            shutdown: AtomicBool::new(false),
            respawns: AtomicU64::new(0),
            hook: RwLock::new(None),
        });
        for job in jobs {
            match job.status {
                JobStatus::Queued => orch.queue.push(job.id),
                JobStatus::Running => orch.fail(&job.id, "interrupted", "the process stopped while the job was running")?,
                _ => {}
            }
        }
        Ok(orch)
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn set_hook(&self, hook: Option<StageHook>) {
        *self.hook.write().unwrap() = hook;
    }

    /// Structural and referential checks that need the store.
    pub fn validate(&self, config: &PipelineConfig) -> Result<()> {
        config.validate()?;
        let split = self.store.splits.get(&config.split_key).ok_or_else(|| Error::not_found("split", &config.split_key))?;
        let log = self.store.logs.get(&split.spec.log_ref).ok_or_else(|| Error::not_found("log", &split.spec.log_ref))?;
        if let Some(attr) = config.label.kind.target_attribute() {
            let known = log.stats.attributes.iter().any(|a| a.name == attr && a.scope == ppm_core::log::AttributeScope::Trace);
            if !known {
                return Err(Error::invalid(format!("label attribute `{attr}` does not occur on any trace of log {}", log.id)));
            }
        }
        Ok(())
    }

    /// Validates every config first; either all are enqueued or none.
    pub fn validate_and_enqueue(&self, configs: &[PipelineConfig]) -> Result<Vec<JobRecord>> {
        for c in configs {
            self.validate(c)?;
        }
        let mut out = Vec::with_capacity(configs.len());
        for config in configs {
            let seq = self.next_seq.fetch_add(1, Ordering::SeqCst);
            let id = format!("job-{seq:06}");
            let mut job = JobRecord {
                id: id.clone(),
                seq,
                status: JobStatus::Created,
                task_identity: config.task_identity(),
                config: config.clone(),
                result: None,
                error_detail: None,
                transitions: vec![Transition { status: JobStatus::Created, at: now() }],
            };
            self.store.jobs.put(&id, job.clone())?;
            job = self.store.jobs.update(&id, |j| {
                j.advance(JobStatus::Queued)?;
                Ok(j.clone())
            })?;
            self.queue.push(id);
            out.push(job);
        }
        Ok(out)
    }

    /// Matching jobs, newest first.
    pub fn query_jobs(&self, filter: &JobFilter) -> Vec<JobRecord> {
        let mut jobs: Vec<JobRecord> =
            self.store.jobs.scan(|rows| rows.values().filter(|j| filter.matches(j)).cloned().collect());
        jobs.sort_by(|a, b| b.seq.cmp(&a.seq));
        jobs
    }

    pub fn job(&self, id: &str) -> Result<JobRecord> {
        self.store.jobs.get(id).ok_or_else(|| Error::not_found("job", id))
    }

    /// Pipeline executions per job id since this process started.
    pub fn executions(&self) -> HashMap<String, u32> {
        self.executions.lock().unwrap().clone()
    }

    pub fn pool_status(&self) -> PoolStatus {
        let workers = self.workers.lock().unwrap();
        PoolStatus {
            workers: workers.len(),
            alive: workers.iter().filter(|w| w.handle.as_ref().is_some_and(|h| !h.is_finished())).count(),
            busy: self.busy.load(Ordering::SeqCst),
            queued: self.queue.len(),
            respawns: self.respawns.load(Ordering::SeqCst),
        }
    }

    /// Starts `count` workers and a supervisor that respawns dead ones.
    pub fn start(self: &Arc<Self>, count: usize) {
        let mut workers = self.workers.lock().unwrap();
        for index in workers.len()..workers.len() + count {
            workers.push(self.spawn_worker(index));
        }
        let mut sup = self.supervisor.lock().unwrap();
        if sup.is_none() {
            let weak = Arc::downgrade(self);
            *sup = Some(std::thread::Builder::new().name("ppm-supervisor".into()).spawn(move || supervise(weak)).unwrap());
        }
    }

    fn spawn_worker(self: &Arc<Self>, index: usize) -> WorkerSlot {
        let state = Arc::new(WorkerState::default());
        let weak = Arc::downgrade(self);
        let shared = state.clone();
        let handle = std::thread::Builder::new()
            .name(format!("ppm-worker-{index}"))
            .spawn(move || worker_loop(weak, shared))
            .expect("spawn worker");
        WorkerSlot { handle: Some(handle), state }
    }

    /// Kills a worker at its next stage boundary, or while idle.
    pub fn kill_worker(&self, index: usize) -> bool {
        match self.workers.lock().unwrap().get(index) {
            Some(w) => {
                w.state.kill.store(true, Ordering::SeqCst);
                true
            }
            None => false,
        }
    }

    /// Waits until the queue is drained and no worker is busy.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if self.queue.len() == 0 && self.busy.load(Ordering::SeqCst) == 0 {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.queue.ready.notify_all();
        let handles: Vec<JoinHandle<()>> = {
            let mut workers = self.workers.lock().unwrap();
            workers.iter_mut().filter_map(|w| w.handle.take()).collect()
        };
        for h in handles {
            let _ = h.join();
        }
        if let Some(h) = self.supervisor.lock().unwrap().take() {
            let _ = h.join();
        }
    }

    fn fail(&self, id: &str, code: &str, message: &str) -> Result<()> {
        self.store.jobs.update(id, |j| {
            j.advance(JobStatus::Error)?;
            j.error_detail = Some(ErrorDetail { code: code.into(), message: message.into() });
            Ok(())
        })
    }

    fn persist(&self, job: &JobRecord, outcome: &Outcome) -> Result<ResultRef> {
        let fingerprint = outcome.report.model_fingerprint.clone();
        self.store.models.put_new(
            &fingerprint,
            ModelRecord {
                fingerprint: fingerprint.clone(),
                job_id: job.id.clone(),
                config: job.config.clone(),
                encoder_digest: outcome.encoder_digest.clone(),
                training_time: outcome.model.model.training_time,
                trials: outcome.model.trials.clone(),
                created_at: now(),
            },
        )?;
        self.store.reports.put(
            &job.id,
            ReportRecord { job_id: job.id.clone(), seq: job.seq, created_at: now(), report: outcome.report.clone() },
        )?;
        Ok(ResultRef { model_fingerprint: fingerprint, report_id: job.id.clone() })
    }

    /// Runs one dequeued job. Returns false when the worker was killed.
    fn execute(&self, id: &str, kill: &AtomicBool) -> bool {
        let Some(job) = self.store.jobs.get(id) else {
            tracing::warn!(job = id, "dequeued job is missing from the store; skipped");
            return true;
        };
        if job.status != JobStatus::Queued {
            tracing::warn!(job = id, status = job.status.name(), "dequeued job is not queued; skipped");
            return true;
        }
        let job = match self.store.jobs.update(id, |j| {
            j.advance(JobStatus::Running)?;
            Ok(j.clone())
        }) {
            Ok(j) => j,
            Err(e) => {
                tracing::error!(job = id, error = %e, "cannot mark job running");
                return true;
            }
        };
        *self.executions.lock().unwrap().entry(id.to_string()).or_default() += 1;

        let hook = self.hook.read().unwrap().clone();
        let checkpoint = |stage: Stage| {
            let action = hook.as_ref().map_or(HookAction::Continue, |h| h(id, stage));
            if kill.load(Ordering::SeqCst) || action == HookAction::Kill {
                kill.store(true, Ordering::SeqCst);
                resume_unwind(Box::new(WorkerKilled));
            }
            if let HookAction::Panic(msg) = action {
                panic!("{msg}");
            }
        };
        let pipeline = Pipeline { store: &self.store, cache: &self.cache };
        let result = catch_unwind(AssertUnwindSafe(|| {
            let outcome = pipeline.run(&job.config, &checkpoint)?;
            self.persist(&job, &outcome)
        }));
        let recorded = match result {
            Ok(Ok(result)) => self.store.jobs.update(id, |j| {
                j.advance(JobStatus::Completed)?;
                j.result = Some(result);
                Ok(())
            }),
            Ok(Err(e)) => self.fail(id, e.code(), &e.to_string()),
            Err(payload) if payload.is::<WorkerKilled>() => return false,
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                self.fail(id, Error::Panic(String::new()).code(), &format!("pipeline panicked: {msg}"))
            }
        };
        if let Err(e) = recorded {
            tracing::error!(job = id, error = %e, "cannot record job outcome");
        }
        true
    }
}

impl Drop for Orchestrator {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.queue.ready.notify_all();
    }
}

fn worker_loop(orch: Weak<Orchestrator>, state: Arc<WorkerState>) {
    loop {
        let Some(o) = orch.upgrade() else { return };
        if o.shutdown.load(Ordering::SeqCst) || state.kill.load(Ordering::SeqCst) {
            return;
        }
        let Some(id) = o.queue.pop(POLL, &o.busy) else { continue };
        *state.current.lock().unwrap() = Some(id.clone());
        let alive = o.execute(&id, &state.kill);
        if !alive {
            // the job stays in hand; the supervisor closes it
            tracing::warn!(job = %id, "worker killed mid-job");
            o.busy.fetch_sub(1, Ordering::SeqCst);
            return;
        }
        *state.current.lock().unwrap() = None;
        o.busy.fetch_sub(1, Ordering::SeqCst);
    }
}

fn supervise(orch: Weak<Orchestrator>) {
    loop {
        std::thread::sleep(POLL);
        let Some(o) = orch.upgrade() else { return };
        if o.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let dead: Vec<usize> = {
            let workers = o.workers.lock().unwrap();
            workers
                .iter()
                .enumerate()
                .filter(|(_, w)| w.handle.as_ref().is_some_and(|h| h.is_finished()))
                .map(|(i, _)| i)
                .collect()
        };
        for index in dead {
            let slot = o.spawn_worker(index);
            let old = std::mem::replace(&mut o.workers.lock().unwrap()[index], slot);
            if let Some(h) = old.handle {
                let _ = h.join();
            }
            o.respawns.fetch_add(1, Ordering::SeqCst);
            let orphan = old.state.current.lock().unwrap().take();
            if let Some(id) = orphan {
                if o.store.jobs.get(&id).is_some_and(|j| j.status == JobStatus::Running) {
                    if let Err(e) = o.fail(&id, "worker_lost", "the worker running this job died") {
                        tracing::error!(job = %id, error = %e, "cannot close orphaned job");
                    }
                }
            }
            tracing::info!(worker = index, "respawned worker");
        }
    }
}
