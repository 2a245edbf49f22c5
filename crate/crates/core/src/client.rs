//! What a worker or an initiator sees of the broker and the datastore.
//!
//! The same traits are implemented by the in-process services, by the TCP
//! clients in [`crate::wire`], and by [`SimulatedLink`], which wraps either
//! of those with injected latency and an abrupt-disconnect switch.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::broker::{Broker, Depth, Lease, LeaseId};
use crate::error::{Error, Result};
use crate::job::{QueueName, TaskEnvelope};
use crate::store::{DataStore, VersionedRecord};

pub trait QueueClient: Send + Sync {
    fn create_queue(&self, q: &QueueName) -> Result<()>;
    fn publish(&self, q: &QueueName, task: TaskEnvelope) -> Result<()>;
    fn fetch(&self, q: &QueueName, worker_id: &str) -> Result<Option<Lease>>;
    fn ack(&self, lease_id: LeaseId) -> Result<()>;
    /// Hands a leased task back for immediate redelivery.
    fn release(&self, lease_id: LeaseId) -> Result<()>;
    fn depth(&self, q: &QueueName) -> Result<Depth>;

    /// `create_queue`, treating an existing queue as success.
    fn ensure_queue(&self, q: &QueueName) -> Result<()> {
        match self.create_queue(q) {
            Ok(()) | Err(Error::QueueExists(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }
}

pub trait StoreClient: Send + Sync {
    fn put_plain(&self, key: &str, payload: Vec<u8>) -> Result<()>;
    fn get_plain(&self, key: &str) -> Result<Arc<Vec<u8>>>;
    fn put_versioned(&self, key: &str, version: u64, payload: Vec<u8>) -> Result<()>;
    fn get_versioned(&self, key: &str) -> Result<VersionedRecord>;
    fn wait_for_version(&self, key: &str, min_version: u64, timeout: Duration) -> Result<VersionedRecord>;
}

impl QueueClient for Broker {
    fn create_queue(&self, q: &QueueName) -> Result<()> {
        Broker::create_queue(self, q)
    }
    fn publish(&self, q: &QueueName, task: TaskEnvelope) -> Result<()> {
        Broker::publish(self, q, task)
    }
    fn fetch(&self, q: &QueueName, worker_id: &str) -> Result<Option<Lease>> {
        Broker::fetch(self, q, worker_id)
    }
    fn ack(&self, lease_id: LeaseId) -> Result<()> {
        Broker::ack(self, lease_id)
    }
    fn release(&self, lease_id: LeaseId) -> Result<()> {
        Broker::release(self, lease_id)
    }
    fn depth(&self, q: &QueueName) -> Result<Depth> {
        Broker::depth(self, q)
    }
}

impl StoreClient for DataStore {
    fn put_plain(&self, key: &str, payload: Vec<u8>) -> Result<()> {
        DataStore::put_plain(self, key, payload);
        Ok(())
    }
    fn get_plain(&self, key: &str) -> Result<Arc<Vec<u8>>> {
        DataStore::get_plain(self, key)
    }
    fn put_versioned(&self, key: &str, version: u64, payload: Vec<u8>) -> Result<()> {
        DataStore::put_versioned(self, key, version, payload)
    }
    fn get_versioned(&self, key: &str) -> Result<VersionedRecord> {
        DataStore::get_versioned(self, key)
    }
    fn wait_for_version(&self, key: &str, min_version: u64, timeout: Duration) -> Result<VersionedRecord> {
        DataStore::wait_for_version(self, key, min_version, timeout)
    }
}

impl<T: QueueClient + ?Sized> QueueClient for Arc<T> {
    fn create_queue(&self, q: &QueueName) -> Result<()> {
        (**self).create_queue(q)
    }
    fn publish(&self, q: &QueueName, task: TaskEnvelope) -> Result<()> {
        (**self).publish(q, task)
    }
    fn fetch(&self, q: &QueueName, worker_id: &str) -> Result<Option<Lease>> {
        (**self).fetch(q, worker_id)
    }
    fn ack(&self, lease_id: LeaseId) -> Result<()> {
        (**self).ack(lease_id)
    }
    fn release(&self, lease_id: LeaseId) -> Result<()> {
        (**self).release(lease_id)
    }
    fn depth(&self, q: &QueueName) -> Result<Depth> {
        (**self).depth(q)
    }
}

impl<T: StoreClient + ?Sized> StoreClient for Arc<T> {
    fn put_plain(&self, key: &str, payload: Vec<u8>) -> Result<()> {
        (**self).put_plain(key, payload)
    }
    fn get_plain(&self, key: &str) -> Result<Arc<Vec<u8>>> {
        (**self).get_plain(key)
    }
    fn put_versioned(&self, key: &str, version: u64, payload: Vec<u8>) -> Result<()> {
        (**self).put_versioned(key, version, payload)
    }
    fn get_versioned(&self, key: &str) -> Result<VersionedRecord> {
        (**self).get_versioned(key)
    }
    fn wait_for_version(&self, key: &str, min_version: u64, timeout: Duration) -> Result<VersionedRecord> {
        (**self).wait_for_version(key, min_version, timeout)
    }
}

/// Extra delay added to every request a session makes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    #[default]
    None,
    Fixed { ms: u64 },
    Uniform { min_ms: u64, max_ms: u64 },
}

impl LatencyModel {
    fn sample(&self, rng: &Mutex<ChaCha8Rng>) -> Duration {
        match *self {
            LatencyModel::None => Duration::ZERO,
            LatencyModel::Fixed { ms } => Duration::from_millis(ms),
            LatencyModel::Uniform { min_ms, max_ms } => {
                Duration::from_millis(rng.lock().gen_range(min_ms..=max_ms.max(min_ms)))
            }
        }
    }
}

/// One worker's private connection to the broker and the datastore, with
/// simulated network latency and a kill switch. Once killed, every request
/// fails with [`Error::ConnectionLost`], including one already in flight
/// whose effect may or may not have been applied.
pub struct SimulatedLink {
    broker: Arc<dyn QueueClient>,
    store: Arc<dyn StoreClient>,
    latency: LatencyModel,
    rng: Mutex<ChaCha8Rng>,
    killed: AtomicBool,
}

impl SimulatedLink {
    pub fn new(broker: Arc<dyn QueueClient>, store: Arc<dyn StoreClient>, latency: LatencyModel, seed: u64) -> Arc<Self> {
        Arc::new(SimulatedLink {
            broker,
            store,
            latency,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            killed: AtomicBool::new(false),
        })
    }

    pub fn kill(&self) {
        self.killed.store(true, Ordering::SeqCst);
    }

    pub fn is_killed(&self) -> bool {
        self.killed.load(Ordering::SeqCst)
    }

    fn call<T>(&self, op: impl FnOnce() -> Result<T>) -> Result<T> {
        if self.is_killed() {
            return Err(Error::ConnectionLost("link killed".into()));
        }
        let d = self.latency.sample(&self.rng);
        if !d.is_zero() {
            thread::sleep(d);
        }
        let out = op();
        if self.is_killed() {
            return Err(Error::ConnectionLost("link killed".into()));
        }
        out
    }
}

impl QueueClient for SimulatedLink {
    fn create_queue(&self, q: &QueueName) -> Result<()> {
        self.call(|| self.broker.create_queue(q))
    }
    fn publish(&self, q: &QueueName, task: TaskEnvelope) -> Result<()> {
        self.call(|| self.broker.publish(q, task))
    }
    fn fetch(&self, q: &QueueName, worker_id: &str) -> Result<Option<Lease>> {
        self.call(|| self.broker.fetch(q, worker_id))
    }
    fn ack(&self, lease_id: LeaseId) -> Result<()> {
        self.call(|| self.broker.ack(lease_id))
    }
    fn release(&self, lease_id: LeaseId) -> Result<()> {
        self.call(|| self.broker.release(lease_id))
    }
    fn depth(&self, q: &QueueName) -> Result<Depth> {
        self.call(|| self.broker.depth(q))
    }
}

impl StoreClient for SimulatedLink {
    fn put_plain(&self, key: &str, payload: Vec<u8>) -> Result<()> {
        self.call(|| self.store.put_plain(key, payload))
    }
    fn get_plain(&self, key: &str) -> Result<Arc<Vec<u8>>> {
        self.call(|| self.store.get_plain(key))
    }
    fn put_versioned(&self, key: &str, version: u64, payload: Vec<u8>) -> Result<()> {
        self.call(|| self.store.put_versioned(key, version, payload))
    }
    fn get_versioned(&self, key: &str) -> Result<VersionedRecord> {
        self.call(|| self.store.get_versioned(key))
    }
    fn wait_for_version(&self, key: &str, min_version: u64, timeout: Duration) -> Result<VersionedRecord> {
        self.call(|| self.store.wait_for_version(key, min_version, timeout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::job::TaskKind;
    use std::time::Instant;

    #[test]
    fn killed_link_refuses_everything() {
        let broker = Arc::new(Broker::new());
        let store = Arc::new(DataStore::new());
        let link = SimulatedLink::new(broker.clone(), store, LatencyModel::None, 1);
        let q = QueueName::initial();
        link.create_queue(&q).unwrap();
        link.publish(&q, TaskEnvelope::new(1, "j", TaskKind::Map, vec![])).unwrap();
        let lease = link.fetch(&q, "w").unwrap().unwrap();
        link.kill();
        assert!(link.ack(lease.lease_id).unwrap_err().is_connection());
        assert!(link.get_plain("x").unwrap_err().is_connection());
        // The broker itself is untouched: the lease is still live.
        assert_eq!(broker.depth(&q).unwrap(), Depth { pending: 0, leased: 1 });
    }

    #[test]
    fn fixed_latency_is_applied() {
        let link = SimulatedLink::new(
            Arc::new(Broker::new()),
            Arc::new(DataStore::new()),
            LatencyModel::Fixed { ms: 20 },
            1,
        );
        let t = Instant::now();
        let _ = link.get_plain("k");
        assert!(t.elapsed() >= Duration::from_millis(20));
    }

    #[test]
    fn ensure_queue_tolerates_existing() {
        let b = Broker::new();
        let q = QueueName::initial();
        QueueClient::ensure_queue(&b, &q).unwrap();
        QueueClient::ensure_queue(&b, &q).unwrap();
    }
}
