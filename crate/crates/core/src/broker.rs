//! The queue server: named queues with lease-based, at-least-once delivery.
//!
//! A published task sits in `pending` until a worker fetches it. Fetching
//! issues a [`Lease`] that hides the task until either the worker acks it
//! (the task is gone for good) or the lease deadline passes and
//! [`Broker::sweep_expired`] puts it back. Pending tasks are served in
//! `(required_model_version, task_id)` order, so a redelivered task for an
//! old model version jumps ahead of work that is waiting on a newer one.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, MonotonicClock};
use crate::error::{Error, Result};
use crate::job::{QueueName, TaskEnvelope};

pub type LeaseId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub lease_id: LeaseId,
    pub queue: QueueName,
    pub task: TaskEnvelope,
    pub worker_id: String,
    pub issued_at: u64,
    pub deadline: u64,
}

/// Pending and leased counts of one queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Depth {
    pub pending: usize,
    pub leased: usize,
}

/// Lifetime counters of one queue. `published == pending + leased + acked + purged`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueStats {
    pub published: u64,
    pub pending: u64,
    pub leased: u64,
    pub acked: u64,
    pub purged: u64,
    pub redelivered: u64,
}

impl QueueStats {
    pub fn is_conserved(&self) -> bool {
        self.published == self.pending + self.leased + self.acked + self.purged
    }
}

// (required_model_version, task_id, publish sequence)
type PendingKey = (u64, u64, u64);

#[derive(Default)]
struct QueueState {
    pending: BTreeMap<PendingKey, TaskEnvelope>,
    leased: usize,
    published: u64,
    acked: u64,
    purged: u64,
    redelivered: u64,
}

struct LiveLease {
    lease: Lease,
    seq: u64,
}

#[derive(Default)]
struct BrokerState {
    queues: HashMap<QueueName, QueueState>,
    leases: HashMap<LeaseId, LiveLease>,
    next_lease: LeaseId,
    next_seq: u64,
}

impl BrokerState {
    fn queue_mut(&mut self, q: &QueueName) -> Result<&mut QueueState> {
        self.queues
            .get_mut(q)
            .ok_or_else(|| Error::NoSuchQueue(q.to_string()))
    }

    // Returns an expired or released lease's task to pending under its
    // original key, so it keeps its place in the priority order.
    fn requeue(&mut self, live: LiveLease) {
        let task = live.lease.task;
        let key = (task.required_model_version, task.task_id, live.seq);
        if let Some(q) = self.queues.get_mut(&live.lease.queue) {
            q.leased -= 1;
            q.redelivered += 1;
            q.pending.insert(key, task);
        }
    }
}

pub struct Broker {
    state: Mutex<BrokerState>,
    clock: Arc<dyn Clock>,
}

impl Default for Broker {
    fn default() -> Self {
        Broker::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Broker::with_clock(Arc::new(MonotonicClock::new()))
    }

    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Broker {
            state: Mutex::new(BrokerState {
                next_lease: 1,
                ..Default::default()
            }),
            clock,
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn create_queue(&self, name: &QueueName) -> Result<()> {
        let mut st = self.state.lock();
        if st.queues.contains_key(name) {
            return Err(Error::QueueExists(name.to_string()));
        }
        st.queues.insert(name.clone(), QueueState::default());
        Ok(())
    }

    /// Creates the queue unless it already exists.
    pub fn ensure_queue(&self, name: &QueueName) {
        self.state.lock().queues.entry(name.clone()).or_default();
    }

    pub fn publish(&self, q: &QueueName, task: TaskEnvelope) -> Result<()> {
        task.validate()?;
        let mut st = self.state.lock();
        let seq = st.next_seq;
        let queue = st.queue_mut(q)?;
        queue
            .pending
            .insert((task.required_model_version, task.task_id, seq), task);
        queue.published += 1;
        st.next_seq += 1;
        Ok(())
    }

    /// Leases the highest-priority pending task, or returns `None` when the
    /// queue has nothing visible.
    pub fn fetch(&self, q: &QueueName, worker_id: &str) -> Result<Option<Lease>> {
        let now = self.clock.now_ms();
        let mut st = self.state.lock();
        let lease_id = st.next_lease;
        let queue = st.queue_mut(q)?;
        let Some(((_, _, seq), mut task)) = queue.pending.pop_first() else {
            return Ok(None);
        };
        queue.leased += 1;
        task.delivery_count += 1;
        let lease = Lease {
            lease_id,
            queue: q.clone(),
            deadline: now + task.max_duration_ms,
            task,
            worker_id: worker_id.to_string(),
            issued_at: now,
        };
        st.next_lease += 1;
        st.leases.insert(
            lease_id,
            LiveLease {
                lease: lease.clone(),
                seq,
            },
        );
        Ok(Some(lease))
    }

    /// Removes the leased task for good. A lease whose deadline has passed is
    /// no longer live: acking it fails and its task goes back to pending.
    pub fn ack(&self, lease_id: LeaseId) -> Result<()> {
        let now = self.clock.now_ms();
        let mut st = self.state.lock();
        let live = st
            .leases
            .remove(&lease_id)
            .ok_or(Error::UnknownLease(lease_id))?;
        if now >= live.lease.deadline {
            st.requeue(live);
            return Err(Error::UnknownLease(lease_id));
        }
        if let Some(q) = st.queues.get_mut(&live.lease.queue) {
            q.leased -= 1;
            q.acked += 1;
        }
        Ok(())
    }

    /// Gives a leased task back without completing it. The task becomes
    /// visible again immediately.
    pub fn release(&self, lease_id: LeaseId) -> Result<()> {
        let mut st = self.state.lock();
        let live = st
            .leases
            .remove(&lease_id)
            .ok_or(Error::UnknownLease(lease_id))?;
        st.requeue(live);
        Ok(())
    }

    /// Returns every lease whose deadline is at or before `now` to pending.
    pub fn sweep_expired(&self, now: u64) -> usize {
        let mut st = self.state.lock();
        let expired: Vec<LeaseId> = st
            .leases
            .iter()
            .filter(|(_, l)| l.lease.deadline <= now)
            .map(|(id, _)| *id)
            .collect();
        for id in &expired {
            let live = st.leases.remove(id).expect("lease listed above");
            st.requeue(live);
        }
        expired.len()
    }

    pub fn sweep_now(&self) -> usize {
        self.sweep_expired(self.clock.now_ms())
    }

    pub fn depth(&self, q: &QueueName) -> Result<Depth> {
        let st = self.state.lock();
        let queue = st.queues.get(q).ok_or_else(|| Error::NoSuchQueue(q.to_string()))?;
        Ok(Depth {
            pending: queue.pending.len(),
            leased: queue.leased,
        })
    }

    pub fn stats(&self, q: &QueueName) -> Result<QueueStats> {
        let st = self.state.lock();
        let queue = st.queues.get(q).ok_or_else(|| Error::NoSuchQueue(q.to_string()))?;
        Ok(QueueStats {
            published: queue.published,
            pending: queue.pending.len() as u64,
            leased: queue.leased as u64,
            acked: queue.acked,
            purged: queue.purged,
            redelivered: queue.redelivered,
        })
    }

    pub fn queue_names(&self) -> Vec<QueueName> {
        let mut names: Vec<_> = self.state.lock().queues.keys().cloned().collect();
        names.sort();
        names
    }

    /// Task ids currently under a live lease, for invariant checks.
    pub fn leased_task_ids(&self) -> Vec<(QueueName, u64)> {
        self.state
            .lock()
            .leases
            .values()
            .map(|l| (l.lease.queue.clone(), l.lease.task.task_id))
            .collect()
    }

    /// Drops every pending and leased task belonging to `job_id` across all
    /// queues. Returns how many were removed.
    pub fn purge_job(&self, job_id: &str) -> usize {
        let mut st = self.state.lock();
        let mut removed = 0;
        let doomed: Vec<LeaseId> = st
            .leases
            .iter()
            .filter(|(_, l)| l.lease.task.job_id == job_id)
            .map(|(id, _)| *id)
            .collect();
        for id in doomed {
            let live = st.leases.remove(&id).expect("lease listed above");
            if let Some(q) = st.queues.get_mut(&live.lease.queue) {
                q.leased -= 1;
                q.purged += 1;
            }
            removed += 1;
        }
        for q in st.queues.values_mut() {
            let before = q.pending.len();
            q.pending.retain(|_, t| t.job_id != job_id);
            let n = before - q.pending.len();
            q.purged += n as u64;
            removed += n;
        }
        removed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::job::TaskKind;

    fn task(id: u64, version: u64) -> TaskEnvelope {
        TaskEnvelope::new(id, "job", TaskKind::Map, vec![])
            .with_version(version)
            .with_max_duration(1000)
    }

    fn setup() -> (Broker, Arc<ManualClock>, QueueName) {
        let clock = ManualClock::new(0);
        let b = Broker::with_clock(clock.clone());
        let q = QueueName::initial();
        b.create_queue(&q).unwrap();
        (b, clock, q)
    }

    #[test]
    fn fresh_queue_is_empty() {
        let (b, _, q) = setup();
        assert_eq!(b.depth(&q).unwrap(), Depth::default());
        assert_eq!(b.fetch(&q, "w").unwrap(), None);
    }

    #[test]
    fn duplicate_queue_rejected() {
        let (b, _, q) = setup();
        assert_eq!(b.create_queue(&q), Err(Error::QueueExists(q.to_string())));
    }

    #[test]
    fn thousand_queues_are_independent() {
        let b = Broker::new();
        let names: Vec<QueueName> = (0..1000).map(|i| QueueName::new(format!("q{i}")).unwrap()).collect();
        for n in &names {
            b.create_queue(n).unwrap();
        }
        for (i, n) in names.iter().enumerate() {
            for j in 0..(i % 3) {
                b.publish(n, task(j as u64, 0)).unwrap();
            }
        }
        for (i, n) in names.iter().enumerate() {
            assert_eq!(b.depth(n).unwrap().pending, i % 3);
        }
    }

    #[test]
    fn publish_to_missing_queue() {
        let b = Broker::new();
        let q = QueueName::new("nope").unwrap();
        assert_eq!(b.publish(&q, task(1, 0)), Err(Error::NoSuchQueue("nope".into())));
        assert!(matches!(b.fetch(&q, "w"), Err(Error::NoSuchQueue(_))));
        assert!(matches!(b.depth(&q), Err(Error::NoSuchQueue(_))));
    }

    #[test]
    fn full_reference_job_depth() {
        let (b, _, q) = setup();
        // 5 epochs x (2048 / 128) batches x (128 / 8) mini-batches
        let maps = 5 * (2048 / 128) * (128 / 8);
        for id in 0..maps {
            b.publish(&q, task(id, id / 16)).unwrap();
        }
        assert_eq!(maps, 1280);
        assert_eq!(b.depth(&q).unwrap().pending, 1280);
    }

    #[test]
    fn fetch_order_is_version_then_id() {
        let (b, _, q) = setup();
        b.publish(&q, task(10, 2)).unwrap();
        b.publish(&q, task(11, 1)).unwrap();
        b.publish(&q, task(12, 1)).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| b.fetch(&q, "w").unwrap())
            .map(|l| (l.task.required_model_version, l.task.task_id))
            .collect();
        assert_eq!(order, [(1, 11), (1, 12), (2, 10)]);
    }

    #[test]
    fn concurrent_fetch_single_winner() {
        for _ in 0..200 {
            let b = Arc::new(Broker::new());
            let q = QueueName::initial();
            b.create_queue(&q).unwrap();
            b.publish(&q, task(1, 0)).unwrap();
            let handles: Vec<_> = (0..2)
                .map(|i| {
                    let b = b.clone();
                    let q = q.clone();
                    std::thread::spawn(move || b.fetch(&q, &format!("w{i}")).unwrap())
                })
                .collect();
            let got: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
            assert_eq!(got.iter().filter(|l| l.is_some()).count(), 1);
        }
    }

    #[test]
    fn ack_removes_task_forever() {
        let (b, clock, q) = setup();
        b.publish(&q, task(1, 0)).unwrap();
        let l = b.fetch(&q, "w").unwrap().unwrap();
        b.ack(l.lease_id).unwrap();
        assert_eq!(b.depth(&q).unwrap(), Depth::default());
        clock.advance(10_000);
        assert_eq!(b.sweep_now(), 0);
        assert_eq!(b.fetch(&q, "w").unwrap(), None);
        assert_eq!(b.ack(l.lease_id), Err(Error::UnknownLease(l.lease_id)));
    }

    #[test]
    fn ack_after_expiry_is_rejected_and_task_returns() {
        let (b, clock, q) = setup();
        b.publish(&q, task(1, 0)).unwrap();
        let l = b.fetch(&q, "w").unwrap().unwrap();
        clock.set(l.deadline);
        assert_eq!(b.sweep_now(), 1);
        assert_eq!(b.ack(l.lease_id), Err(Error::UnknownLease(l.lease_id)));
        assert_eq!(b.depth(&q).unwrap(), Depth { pending: 1, leased: 0 });
    }

    #[test]
    fn late_ack_before_sweep_also_rejected() {
        let (b, clock, q) = setup();
        b.publish(&q, task(1, 0)).unwrap();
        let l = b.fetch(&q, "w").unwrap().unwrap();
        clock.set(l.deadline + 1);
        assert_eq!(b.ack(l.lease_id), Err(Error::UnknownLease(l.lease_id)));
        let again = b.fetch(&q, "w2").unwrap().unwrap();
        assert_eq!(again.task.delivery_count, 2);
    }

    #[test]
    fn sweep_respects_deadline() {
        let (b, clock, q) = setup();
        assert_eq!(b.sweep_now(), 0);
        b.publish(&q, task(1, 0)).unwrap();
        clock.set(100);
        let l = b.fetch(&q, "w").unwrap().unwrap();
        assert_eq!(l.deadline, 1100);
        assert_eq!(b.sweep_expired(1099), 0);
        assert_eq!(b.sweep_expired(1100), 1);
        let again = b.fetch(&q, "w").unwrap().unwrap();
        assert_eq!(again.task.delivery_count, l.task.delivery_count + 1);
    }

    #[test]
    fn sweep_five_expired_conserves() {
        let (b, clock, q) = setup();
        for id in 0..8 {
            b.publish(&q, task(id, 0)).unwrap();
        }
        let leases: Vec<_> = (0..5).map(|_| b.fetch(&q, "w").unwrap().unwrap()).collect();
        assert!(b.stats(&q).unwrap().is_conserved());
        clock.advance(5000);
        assert_eq!(b.sweep_now(), 5);
        let s = b.stats(&q).unwrap();
        assert!(s.is_conserved());
        assert_eq!((s.pending, s.leased), (8, 0));
        for l in leases {
            assert!(b.ack(l.lease_id).is_err());
        }
    }

    #[test]
    fn depth_tracks_scripted_sequence() {
        let (b, _, q) = setup();
        for id in 0..3 {
            b.publish(&q, task(id, 0)).unwrap();
        }
        b.fetch(&q, "w").unwrap().unwrap();
        assert_eq!(b.depth(&q).unwrap(), Depth { pending: 2, leased: 1 });

        let (b, _, q) = setup();
        for id in 0..16 {
            b.publish(&q, task(id, 0)).unwrap();
        }
        let leases: Vec<_> = (0..16).map(|_| b.fetch(&q, "w").unwrap().unwrap()).collect();
        for l in &leases[..7] {
            b.ack(l.lease_id).unwrap();
        }
        assert_eq!(b.depth(&q).unwrap(), Depth { pending: 0, leased: 9 });
    }

    #[test]
    fn release_keeps_priority_position() {
        let (b, _, q) = setup();
        b.publish(&q, task(5, 1)).unwrap();
        b.publish(&q, task(6, 1)).unwrap();
        let first = b.fetch(&q, "w").unwrap().unwrap();
        b.release(first.lease_id).unwrap();
        assert_eq!(b.fetch(&q, "w").unwrap().unwrap().task.task_id, 5);
        assert!(b.release(first.lease_id).is_err());
    }

    #[test]
    fn purge_removes_only_that_job() {
        let (b, _, q) = setup();
        b.publish(&q, task(1, 0)).unwrap();
        b.publish(&q, TaskEnvelope::new(2, "other", TaskKind::Reduce, vec![])).unwrap();
        b.publish(&q, task(3, 0)).unwrap();
        b.fetch(&q, "w").unwrap().unwrap();
        assert_eq!(b.purge_job("job"), 2);
        let s = b.stats(&q).unwrap();
        assert!(s.is_conserved());
        assert_eq!(b.depth(&q).unwrap(), Depth { pending: 1, leased: 0 });
    }
}
