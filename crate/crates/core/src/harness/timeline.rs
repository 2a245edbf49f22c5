use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::worker::RunEvent;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerUsage {
    pub worker_id: String,
    pub busy_ms: f64,
    /// First task start to last task end.
    pub lifetime_ms: f64,
    pub utilization: f64,
    pub idle_fraction: f64,
    pub tasks_by_kind: BTreeMap<String, usize>,
}

impl WorkerUsage {
    pub fn count(&self, kind: &str) -> usize {
        self.tasks_by_kind.get(kind).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimelineSummary {
    /// Sorted by worker id.
    pub workers: Vec<WorkerUsage>,
    pub tasks_by_kind: BTreeMap<String, usize>,
    /// Total busy time over total lifetime, across workers.
    pub utilization: f64,
}

/// Per-worker busy time, utilization and task mix. Events must have
/// `t_start <= t_end` and must not overlap within one worker.
pub fn summarize_timeline(events: &[RunEvent]) -> Result<TimelineSummary> {
    let mut by_worker: BTreeMap<&str, Vec<&RunEvent>> = BTreeMap::new();
    for e in events {
        if !(e.t_start_ms.is_finite() && e.t_end_ms.is_finite()) || e.t_start_ms > e.t_end_ms {
            return Err(Error::MalformedEvents(format!(
                "task {} on {} has interval [{}, {}]",
                e.task_id, e.worker_id, e.t_start_ms, e.t_end_ms
            )));
        }
        by_worker.entry(&e.worker_id).or_default().push(e);
    }

    let mut summary = TimelineSummary::default();
    let (mut busy_total, mut life_total) = (0.0, 0.0);
    for (worker, mut evs) in by_worker {
        evs.sort_by(|a, b| a.t_start_ms.total_cmp(&b.t_start_ms));
        for w in evs.windows(2) {
            if w[1].t_start_ms < w[0].t_end_ms {
                return Err(Error::MalformedEvents(format!(
                    "tasks {} and {} overlap on {worker}",
                    w[0].task_id, w[1].task_id
                )));
            }
        }
        let busy: f64 = evs.iter().map(|e| e.duration_ms()).sum();
        let first = evs[0].t_start_ms;
        let last = evs.iter().map(|e| e.t_end_ms).fold(f64::NEG_INFINITY, f64::max);
        let lifetime = last - first;
        let utilization = if lifetime > 0.0 { busy / lifetime } else { 0.0 };
        let mut kinds = BTreeMap::new();
        for e in &evs {
            *kinds.entry(e.kind.clone()).or_insert(0) += 1;
            *summary.tasks_by_kind.entry(e.kind.clone()).or_insert(0) += 1;
        }
        busy_total += busy;
        life_total += lifetime;
        summary.workers.push(WorkerUsage {
            worker_id: worker.to_string(),
            busy_ms: busy,
            lifetime_ms: lifetime,
            utilization,
            idle_fraction: 1.0 - utilization,
            tasks_by_kind: kinds,
        });
    }
    summary.utilization = if life_total > 0.0 { busy_total / life_total } else { 0.0 };
    Ok(summary)
}
