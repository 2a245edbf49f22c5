//! The volunteer loop: fetch a task, run its handler, ack on success.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::broker::LeaseId;
use crate::client::{QueueClient, StoreClient};
use crate::error::{Error, Result};
use crate::job::{model_key, QueueName, TaskEnvelope, TaskId};
use crate::trainer::load_meta;

/// What a handler gets to work with besides the task itself.
pub struct TaskContext<'a> {
    pub worker_id: &'a str,
    pub broker: &'a dyn QueueClient,
    pub store: &'a dyn StoreClient,
    pub lease_id: LeaseId,
    started: Instant,
    budget: Duration,
}

impl<'a> TaskContext<'a> {
    pub fn new(
        worker_id: &'a str,
        broker: &'a dyn QueueClient,
        store: &'a dyn StoreClient,
        lease_id: LeaseId,
        budget: Duration,
    ) -> Self {
        TaskContext {
            worker_id,
            broker,
            store,
            lease_id,
            started: Instant::now(),
            budget,
        }
    }

    /// Time left before the handler should give up and hand the task back.
    /// Three quarters of the lease, so a release lands before the lease
    /// would expire on its own.
    pub fn remaining(&self) -> Duration {
        self.budget.saturating_sub(self.started.elapsed())
    }
}

/// Executes one kind of task. Returning `Err(Error::Timeout)` releases the
/// task for immediate redelivery; any other error leaves the lease to expire.
pub trait TaskHandler: Send + Sync {
    fn handle(&self, ctx: &TaskContext<'_>, task: &TaskEnvelope) -> Result<()>;
}

impl<F> TaskHandler for F
where
    F: Fn(&TaskContext<'_>, &TaskEnvelope) -> Result<()> + Send + Sync,
{
    fn handle(&self, ctx: &TaskContext<'_>, task: &TaskEnvelope) -> Result<()> {
        self(ctx, task)
    }
}

/// Handlers keyed by the wire name of the task kind.
#[derive(Clone, Default)]
pub struct HandlerTable {
    handlers: HashMap<String, Arc<dyn TaskHandler>>,
}

impl HandlerTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, kind: &crate::job::TaskKind, handler: Arc<dyn TaskHandler>) -> &mut Self {
        self.handlers.insert(kind.as_wire(), handler);
        self
    }

    pub fn with(mut self, kind: &crate::job::TaskKind, handler: Arc<dyn TaskHandler>) -> Self {
        self.register(kind, handler);
        self
    }

    pub fn get(&self, kind: &crate::job::TaskKind) -> Option<&Arc<dyn TaskHandler>> {
        self.handlers.get(&kind.as_wire())
    }

    pub fn kinds(&self) -> Vec<String> {
        let mut k: Vec<_> = self.handlers.keys().cloned().collect();
        k.sort();
        k
    }
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub worker_id: String,
    /// Polled in order; the first non-empty queue wins.
    pub queues: Vec<QueueName>,
    pub empty_backoff: Duration,
    pub max_tasks: Option<usize>,
    pub max_wall: Option<Duration>,
    /// Exit once this job's model reaches its final version.
    pub watch_job: Option<String>,
    /// Consecutive connection failures tolerated before giving up.
    pub max_connection_retries: u32,
    /// Event timestamps are measured from here.
    pub epoch: Instant,
    /// Set from outside to make the worker leave after its current task.
    pub stop: Arc<AtomicBool>,
}

impl WorkerConfig {
    pub fn new(worker_id: impl Into<String>) -> Self {
        WorkerConfig {
            worker_id: worker_id.into(),
            queues: vec![QueueName::initial()],
            empty_backoff: Duration::from_millis(50),
            max_tasks: None,
            max_wall: None,
            watch_job: None,
            max_connection_retries: 6,
            epoch: Instant::now(),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.queues.is_empty() {
            return Err(Error::InvalidConfig("worker needs at least one queue".into()));
        }
        if self.empty_backoff.is_zero() {
            return Err(Error::InvalidConfig("empty backoff must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Acked,
    /// The handler asked for redelivery.
    Released,
    /// The handler failed; the lease is left to expire.
    Failed,
    /// The handler finished but the lease had already expired.
    Expired,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Acked => "acked",
            Outcome::Released => "released",
            Outcome::Failed => "failed",
            Outcome::Expired => "expired",
        })
    }
}

/// One executed task on one worker's timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub worker_id: String,
    pub task_id: TaskId,
    pub kind: String,
    pub t_start_ms: f64,
    pub t_end_ms: f64,
    pub outcome: Outcome,
}

impl RunEvent {
    pub fn duration_ms(&self) -> f64 {
        self.t_end_ms - self.t_start_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    JobComplete,
    MaxTasks,
    MaxWall,
    Stopped,
    ConnectionLost,
}

#[derive(Debug, Clone)]
pub struct WorkerReport {
    pub worker_id: String,
    pub tasks_done: usize,
    pub tasks_failed: usize,
    pub events: Vec<RunEvent>,
    pub exit: ExitReason,
    pub started_ms: f64,
    pub ended_ms: f64,
}

/// True iff the job's model has reached its final version.
pub fn detect_job_complete(store: &dyn StoreClient, job_id: &str) -> Result<bool> {
    let meta = match load_meta(store, job_id) {
        Ok(m) => m,
        Err(Error::NoSuchKey(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    match store.get_versioned(&model_key(job_id)) {
        Ok(rec) => Ok(rec.version >= meta.total_steps),
        Err(Error::NoSuchKey(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

fn ms_since(epoch: Instant) -> f64 {
    epoch.elapsed().as_secs_f64() * 1e3
}

struct Retry {
    failures: u32,
    cap: u32,
}

impl Retry {
    /// Sleeps after a connection failure; false once the cap is reached.
    fn backoff(&mut self) -> bool {
        self.failures += 1;
        if self.failures > self.cap {
            return false;
        }
        let ms = 10u64 << self.failures.min(8);
        thread::sleep(Duration::from_millis(ms.min(2_000)));
        true
    }
}

pub fn run_worker(
    cfg: &WorkerConfig,
    broker: &dyn QueueClient,
    store: &dyn StoreClient,
    handlers: &HandlerTable,
) -> Result<WorkerReport> {
    cfg.validate()?;
    let begun = Instant::now();
    let mut report = WorkerReport {
        worker_id: cfg.worker_id.clone(),
        tasks_done: 0,
        tasks_failed: 0,
        events: Vec::new(),
        exit: ExitReason::Stopped,
        started_ms: ms_since(cfg.epoch),
        ended_ms: 0.0,
    };
    let mut retry = Retry {
        failures: 0,
        cap: cfg.max_connection_retries,
    };

    let exit = 'outer: loop {
        if cfg.stop.load(Ordering::SeqCst) {
            break ExitReason::Stopped;
        }
        if cfg.max_tasks.is_some_and(|n| report.tasks_done + report.tasks_failed >= n) {
            break ExitReason::MaxTasks;
        }
        if cfg.max_wall.is_some_and(|w| begun.elapsed() >= w) {
            break ExitReason::MaxWall;
        }

        let mut lease = None;
        for q in &cfg.queues {
            match broker.fetch(q, &cfg.worker_id) {
                Ok(Some(l)) => {
                    lease = Some(l);
                    break;
                }
                Ok(None) | Err(Error::NoSuchQueue(_)) => {}
                Err(e) if e.is_connection() => {
                    if cfg.stop.load(Ordering::SeqCst) {
                        break 'outer ExitReason::Stopped;
                    }
                    if !retry.backoff() {
                        break 'outer ExitReason::ConnectionLost;
                    }
                    continue 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        retry.failures = 0;

        let Some(lease) = lease else {
            if let Some(job) = &cfg.watch_job {
                match detect_job_complete(store, job) {
                    Ok(true) => break ExitReason::JobComplete,
                    Ok(false) => {}
                    Err(e) if e.is_connection() => {
                        if !retry.backoff() {
                            break ExitReason::ConnectionLost;
                        }
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            thread::sleep(cfg.empty_backoff);
            continue;
        };

        let task = &lease.task;
        let t_start = ms_since(cfg.epoch);
        let budget = Duration::from_millis(task.max_duration_ms * 3 / 4);
        let result = match handlers.get(&task.kind) {
            Some(h) => {
                let ctx = TaskContext::new(&cfg.worker_id, broker, store, lease.lease_id, budget);
                h.handle(&ctx, task)
            }
            None => Err(Error::TaskFailed(format!("no handler for `{}`", task.kind))),
        };

        let outcome = match result {
            Ok(()) => match broker.ack(lease.lease_id) {
                Ok(()) => Outcome::Acked,
                Err(Error::UnknownLease(_)) => Outcome::Expired,
                Err(_) => Outcome::Failed,
            },
            Err(Error::Timeout) => match broker.release(lease.lease_id) {
                Ok(()) => Outcome::Released,
                Err(_) => Outcome::Failed,
            },
            Err(_) => Outcome::Failed,
        };
        match outcome {
            Outcome::Acked | Outcome::Expired => report.tasks_done += 1,
            Outcome::Failed => report.tasks_failed += 1,
            Outcome::Released => {}
        }
        report.events.push(RunEvent {
            worker_id: cfg.worker_id.clone(),
            task_id: task.task_id,
            kind: task.kind.as_wire(),
            t_start_ms: t_start,
            t_end_ms: ms_since(cfg.epoch).max(t_start),
            outcome,
        });
    };
    report.exit = exit;
    report.ended_ms = ms_since(cfg.epoch);
    Ok(report)
}
