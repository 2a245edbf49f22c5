//! In-process experiments: a broker, a datastore and a fleet of worker
//! threads, with scripted joins, departures and network latency.

mod report;
mod timeline;

pub use report::{scaling_suite, write_events_csv, ScalingReport, ScalingRow, StartMode, SuiteOutput};
pub use timeline::{summarize_timeline, TimelineSummary, WorkerUsage};

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::broker::{Broker, QueueStats};
use crate::client::{LatencyModel, SimulatedLink};
use crate::error::{Error, Result};
use crate::job::{model_key, JobSpec};
use crate::nn::{ModelParams, ModelSnapshot};
use crate::store::DataStore;
use crate::trainer::{
    build_dataset, final_loss, plan_job, read_loss_trace, training_handlers, LossPoint, TrainingConfig,
};
use crate::worker::{detect_job_complete, run_worker, HandlerTable, Outcome, RunEvent, WorkerConfig, WorkerReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaveMode {
    /// Finish the current task, then stop.
    Clean,
    /// Drop the connection immediately, abandoning any lease.
    Kill,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnEntry {
    pub worker_id: String,
    pub join_at_ms: u64,
    pub leave_at_ms: Option<u64>,
    pub leave_mode: LeaveMode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnSchedule {
    pub entries: Vec<ChurnEntry>,
}

impl ChurnSchedule {
    /// `n` workers, all present from the start, none leaving.
    pub fn sync_start(n: usize) -> Self {
        Self::staggered(n, 0)
    }

    /// Worker `i` joins at `i * spacing_ms`.
    pub fn staggered(n: usize, spacing_ms: u64) -> Self {
        ChurnSchedule {
            entries: (0..n)
                .map(|i| ChurnEntry {
                    worker_id: format!("w{i:02}"),
                    join_at_ms: i as u64 * spacing_ms,
                    leave_at_ms: None,
                    leave_mode: LeaveMode::Clean,
                })
                .collect(),
        }
    }

    pub fn with_departure(mut self, worker: usize, at_ms: u64, mode: LeaveMode) -> Self {
        let e = &mut self.entries[worker];
        e.leave_at_ms = Some(at_ms);
        e.leave_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidConfig("churn schedule has no workers".into()));
        }
        for e in &self.entries {
            if e.leave_at_ms.is_some_and(|l| l <= e.join_at_ms) {
                return Err(Error::InvalidConfig(format!("{} leaves before it joins", e.worker_id)));
            }
        }
        let mut ids: Vec<_> = self.entries.iter().map(|e| &e.worker_id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.entries.len() {
            return Err(Error::InvalidConfig("duplicate worker ids".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub job_id: String,
    pub training: TrainingConfig,
    pub corpus: String,
    pub initial: Option<ModelParams>,
    pub latency: LatencyModel,
    pub latency_seed: u64,
    /// Give up when the model version has not moved for this long.
    pub stall_after: Duration,
    pub sweep_interval: Duration,
    pub empty_backoff: Duration,
}

impl Experiment {
    pub fn new(training: TrainingConfig, corpus: impl Into<String>) -> Self {
        Experiment {
            job_id: "job".into(),
            training,
            corpus: corpus.into(),
            initial: None,
            latency: LatencyModel::None,
            latency_seed: 0,
            stall_after: Duration::from_secs(60),
            sweep_interval: Duration::from_millis(5),
            empty_backoff: Duration::from_millis(2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub workers: usize,
    /// First worker start to last acknowledged task.
    pub runtime_ms: f64,
    pub final_params: ModelParams,
    pub final_loss: Option<f64>,
    pub trace: Vec<LossPoint>,
    pub events: Vec<RunEvent>,
    pub reports: Vec<WorkerReport>,
    pub task_stats: QueueStats,
}

impl ExperimentResult {
    /// Executions of map tasks that were acknowledged, by task id; more than
    /// one per id means a redelivered task ran to completion twice.
    pub fn map_executions(&self) -> std::collections::BTreeMap<u64, usize> {
        let mut m = std::collections::BTreeMap::new();
        for e in &self.events {
            if e.kind == "map" && e.outcome == Outcome::Acked {
                *m.entry(e.task_id).or_insert(0) += 1;
            }
        }
        m
    }
}

fn spawn_worker(
    entry: ChurnEntry,
    broker: Arc<Broker>,
    store: Arc<DataStore>,
    exp: &Experiment,
    index: usize,
    epoch: Instant,
    shutdown: Arc<AtomicBool>,
) -> thread::JoinHandle<Result<Option<WorkerReport>>> {
    let latency = exp.latency;
    let seed = exp.latency_seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
    let job_id = exp.job_id.clone();
    let backoff = exp.empty_backoff;
    thread::spawn(move || {
        let join_at = epoch + Duration::from_millis(entry.join_at_ms);
        while Instant::now() < join_at {
            if shutdown.load(Ordering::SeqCst) {
                return Ok(None);
            }
            thread::sleep((join_at - Instant::now()).min(Duration::from_millis(5)));
        }
        let link = SimulatedLink::new(broker, store, latency, seed);
        let mut cfg = WorkerConfig::new(entry.worker_id.clone());
        cfg.epoch = epoch;
        cfg.empty_backoff = backoff;
        cfg.watch_job = Some(job_id);
        let stop = cfg.stop.clone();

        let departure = entry.leave_at_ms.map(|at| {
            let link = link.clone();
            let stop = stop.clone();
            let shutdown = shutdown.clone();
            let mode = entry.leave_mode;
            thread::spawn(move || {
                let leave_at = epoch + Duration::from_millis(at);
                while Instant::now() < leave_at && !shutdown.load(Ordering::SeqCst) && !stop.load(Ordering::SeqCst) {
                    thread::sleep((leave_at - Instant::now()).min(Duration::from_millis(5)));
                }
                if mode == LeaveMode::Kill && !shutdown.load(Ordering::SeqCst) {
                    link.kill();
                }
                stop.store(true, Ordering::SeqCst);
            })
        });
        let watcher = {
            let stop = stop.clone();
            let shutdown = shutdown.clone();
            thread::spawn(move || {
                while !shutdown.load(Ordering::SeqCst) && !stop.load(Ordering::SeqCst) {
                    thread::sleep(Duration::from_millis(5));
                }
                stop.store(true, Ordering::SeqCst);
            })
        };
        let handlers: HandlerTable = training_handlers();
        let report = run_worker(&cfg, &*link, &*link, &handlers);
        stop.store(true, Ordering::SeqCst);
        let _ = watcher.join();
        if let Some(d) = departure {
            let _ = d.join();
        }
        report.map(Some)
    })
}

/// Plans the job on a fresh broker and datastore, runs the fleet described
/// by `churn`, and waits for the final model version.
pub fn run_experiment(exp: &Experiment, churn: &ChurnSchedule) -> Result<ExperimentResult> {
    churn.validate()?;
    let broker = Arc::new(Broker::new());
    let store = Arc::new(DataStore::new());
    let spec = JobSpec::new(exp.job_id.clone(), exp.training.clone());
    let plan = plan_job(&spec, &exp.corpus, exp.initial.clone(), &*broker, &*store)?;

    let shutdown = Arc::new(AtomicBool::new(false));
    let sweeper = {
        let broker = broker.clone();
        let shutdown = shutdown.clone();
        let every = exp.sweep_interval;
        thread::spawn(move || {
            while !shutdown.load(Ordering::SeqCst) {
                broker.sweep_now();
                thread::sleep(every);
            }
        })
    };

    let epoch = Instant::now();
    let handles: Vec<_> = churn
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| spawn_worker(e.clone(), broker.clone(), store.clone(), exp, i, epoch, shutdown.clone()))
        .collect();

    let key = model_key(&exp.job_id);
    let mut last_version = 0;
    let mut last_progress = Instant::now();
    let outcome = loop {
        match detect_job_complete(&*store, &exp.job_id) {
            Ok(true) => break Ok(()),
            Ok(false) => {}
            Err(e) => break Err(e),
        }
        let v = store.current_version(&key).unwrap_or(0);
        if v != last_version {
            last_version = v;
            last_progress = Instant::now();
        }
        if last_progress.elapsed() > exp.stall_after {
            break Err(Error::ExperimentStalled(format!(
                "model stuck at version {v} of {}",
                plan.meta.total_steps
            )));
        }
        let scheduled_all = churn.entries.iter().all(|e| epoch.elapsed().as_millis() as u64 > e.join_at_ms);
        if scheduled_all && handles.iter().all(|h| h.is_finished()) {
            // Everyone has left; nothing will ever move again.
            if !detect_job_complete(&*store, &exp.job_id)? {
                break Err(Error::ExperimentStalled(format!(
                    "all workers left at version {v} of {}",
                    plan.meta.total_steps
                )));
            }
        }
        thread::sleep(Duration::from_millis(1));
    };
    shutdown.store(true, Ordering::SeqCst);

    let mut reports = Vec::new();
    let mut worker_err = None;
    for h in handles {
        match h.join() {
            Ok(Ok(Some(r))) => reports.push(r),
            Ok(Ok(None)) => {}
            Ok(Err(e)) => worker_err = Some(e),
            Err(_) => worker_err = Some(Error::TaskFailed("worker thread panicked".into())),
        }
    }
    let _ = sweeper.join();
    outcome?;
    if let Some(e) = worker_err {
        return Err(e);
    }

    let mut events: Vec<RunEvent> = reports.iter().flat_map(|r| r.events.iter().cloned()).collect();
    events.sort_by(|a, b| a.t_start_ms.total_cmp(&b.t_start_ms));
    let first_start = reports.iter().map(|r| r.started_ms).fold(f64::INFINITY, f64::min);
    let last_ack = events
        .iter()
        .filter(|e| e.outcome == Outcome::Acked)
        .map(|e| e.t_end_ms)
        .fold(f64::NEG_INFINITY, f64::max);
    let runtime_ms = if last_ack.is_finite() && first_start.is_finite() {
        (last_ack - first_start).max(0.0)
    } else {
        0.0
    };

    let rec = store.get_versioned(&key)?;
    let snap = ModelSnapshot::decode(&rec.payload)?;
    let dataset = build_dataset(&exp.corpus, &exp.training)?;
    let final_loss = final_loss(&exp.training, &dataset, &snap.params)?;
    let trace = read_loss_trace(&*store, &plan.meta)?;
    let task_stats = broker.stats(&spec.queues.tasks)?;

    Ok(ExperimentResult {
        workers: churn.len(),
        runtime_ms,
        final_params: snap.params,
        final_loss,
        trace,
        events,
        reports,
        task_stats,
    })
}
