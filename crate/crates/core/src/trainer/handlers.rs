use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::Mutex;

use super::plan::{load_meta, JobMeta, MapPayload, ReducePayload};
use super::step::{apply_accumulated, minibatch_gradient};
use super::trace::{map_result_kind, LossRecord};
use super::{build_dataset, Dataset};
use crate::broker::LeaseId;
use crate::client::StoreClient;
use crate::error::{Error, Result};
use crate::job::{corpus_key, loss_key, model_key, GradientResultMsg, TaskEnvelope, TaskKind};
use crate::nn::{ModelSnapshot, NnError};
use crate::worker::{HandlerTable, TaskContext, TaskHandler};

/// A job as seen by a worker: its metadata and the rebuilt sample table.
#[derive(Debug)]
pub struct JobContext {
    pub meta: JobMeta,
    pub dataset: Dataset,
}

/// Per-worker cache so the corpus is downloaded once per job.
#[derive(Default)]
pub struct JobCache {
    jobs: Mutex<HashMap<String, Arc<JobContext>>>,
}

impl JobCache {
    pub fn get(&self, store: &dyn StoreClient, job_id: &str) -> Result<Arc<JobContext>> {
        if let Some(ctx) = self.jobs.lock().get(job_id) {
            return Ok(ctx.clone());
        }
        let meta = load_meta(store, job_id)?;
        let corpus = store.get_plain(&corpus_key(job_id))?;
        let corpus = std::str::from_utf8(&corpus).map_err(|_| Error::TaskFailed("corpus is not UTF-8".into()))?;
        let dataset = build_dataset(corpus, &meta.training)?;
        let ctx = Arc::new(JobContext { meta, dataset });
        self.jobs.lock().insert(job_id.to_string(), ctx.clone());
        Ok(ctx)
    }
}

fn numeric(e: Error) -> Error {
    match e {
        Error::Nn(NnError::NonFinite(what)) => Error::TaskFailed(format!("non-finite {what}")),
        other => other,
    }
}

fn decode_snapshot(bytes: &[u8]) -> Result<ModelSnapshot> {
    ModelSnapshot::decode(bytes).map_err(|e| Error::TaskFailed(format!("model snapshot: {e}")))
}

/// Computes one mini-batch gradient against model version `k` and publishes
/// it to the job's results queue.
pub struct MapHandler {
    cache: Arc<JobCache>,
}

impl MapHandler {
    pub fn new(cache: Arc<JobCache>) -> Self {
        MapHandler { cache }
    }
}

impl TaskHandler for MapHandler {
    fn handle(&self, ctx: &TaskContext<'_>, task: &TaskEnvelope) -> Result<()> {
        let job = self.cache.get(ctx.store, &task.job_id)?;
        let p: MapPayload =
            serde_json::from_slice(&task.payload).map_err(|e| Error::MalformedEnvelope(format!("map payload: {e}")))?;
        let k = task.required_model_version;
        let rec = ctx.store.wait_for_version(&model_key(&task.job_id), k, ctx.remaining())?;
        if rec.version > k {
            // The step is already reduced; this is a late redelivery.
            return Ok(());
        }
        let snap = decode_snapshot(&rec.payload)?;
        let n = job.dataset.len();
        if let Some(&bad) = p.samples.iter().find(|&&i| i as usize >= n) {
            return Err(Error::TaskFailed(format!("sample index {bad} out of range {n}")));
        }
        let samples = job.dataset.samples(p.samples.iter().map(|&i| i as usize));
        let (gradient, loss_sum) = minibatch_gradient(&snap.params, &samples).map_err(numeric)?;
        let delay = job.meta.training.simulated_minibatch_delay_ms;
        if delay > 0 {
            thread::sleep(Duration::from_millis(delay));
        }
        let msg = GradientResultMsg {
            job_id: task.job_id.clone(),
            model_version: k,
            minibatch_index: p.minibatch_index,
            gradient: gradient.into_flat(),
            loss_sum,
            example_count: samples.len() as u32,
        };
        let envelope = TaskEnvelope::new(task.task_id, &task.job_id, map_result_kind(), msg.encode())
            .with_version(k)
            .with_max_duration(job.meta.training.task_max_duration_ms);
        ctx.broker.publish(&job.meta.queues.results, envelope)
    }
}

/// Gathers the `K` gradients of step `k`, applies one optimizer step and
/// writes model version `k + 1`.
pub struct ReduceHandler {
    cache: Arc<JobCache>,
    poll: Duration,
}

impl ReduceHandler {
    pub fn new(cache: Arc<JobCache>) -> Self {
        ReduceHandler {
            cache,
            poll: Duration::from_millis(2),
        }
    }
}

struct Held {
    keep: BTreeMap<u32, (LeaseId, GradientResultMsg)>,
    /// Leased but not ours to consume; handed back when the reduce ends.
    deferred: Vec<LeaseId>,
}

impl Held {
    fn release_all(self, ctx: &TaskContext<'_>) {
        for id in self.keep.values().map(|(id, _)| *id).chain(self.deferred) {
            let _ = ctx.broker.release(id);
        }
    }
}

impl TaskHandler for ReduceHandler {
    fn handle(&self, ctx: &TaskContext<'_>, task: &TaskEnvelope) -> Result<()> {
        let job = self.cache.get(ctx.store, &task.job_id)?;
        let p: ReducePayload = serde_json::from_slice(&task.payload)
            .map_err(|e| Error::MalformedEnvelope(format!("reduce payload: {e}")))?;
        let k = task.required_model_version;
        if p.step != k {
            return Err(Error::MalformedEnvelope("reduce step does not match its version".into()));
        }
        let cfg = &job.meta.training;
        let want = cfg.minibatches_to_accumulate;
        let key = model_key(&task.job_id);
        let base = ctx.store.wait_for_version(&key, k, ctx.remaining())?;
        if base.version > k {
            return Ok(());
        }

        let mut held = Held {
            keep: BTreeMap::new(),
            deferred: Vec::new(),
        };
        while held.keep.len() < want {
            if ctx.remaining().is_zero() {
                held.release_all(ctx);
                return Err(Error::Timeout);
            }
            let lease = match ctx.broker.fetch(&job.meta.queues.results, ctx.worker_id) {
                Ok(l) => l,
                Err(e) => {
                    held.release_all(ctx);
                    return Err(e);
                }
            };
            let Some(lease) = lease else {
                if ctx.store.get_versioned(&key).is_ok_and(|r| r.version > k) {
                    held.release_all(ctx);
                    return Ok(());
                }
                thread::sleep(self.poll);
                continue;
            };
            let msg = match GradientResultMsg::decode(&lease.task.payload) {
                Ok(m) if lease.task.kind == map_result_kind() => m,
                _ => {
                    held.deferred.push(lease.lease_id);
                    continue;
                }
            };
            if msg.job_id != task.job_id || msg.model_version > k {
                held.deferred.push(lease.lease_id);
            } else if msg.model_version < k || held.keep.contains_key(&msg.minibatch_index) {
                // A step that is already reduced, or a duplicate of one we hold.
                let _ = ctx.broker.ack(lease.lease_id);
            } else if msg.minibatch_index as usize >= want {
                held.deferred.push(lease.lease_id);
            } else {
                held.keep.insert(msg.minibatch_index, (lease.lease_id, msg));
            }
        }

        let mut snap = decode_snapshot(&base.payload)?;
        let layout_cfg = *snap.params.config();
        let mut parts = Vec::with_capacity(want);
        for (_, msg) in held.keep.values() {
            match crate::nn::Gradients::from_flat(layout_cfg, msg.gradient.clone()) {
                Ok(g) => parts.push((g, msg.loss_sum)),
                Err(e) => {
                    held.release_all(ctx);
                    return Err(Error::TaskFailed(format!("gradient shape: {e}")));
                }
            }
        }
        let loss = match apply_accumulated(&mut snap, parts.iter().map(|(g, l)| (g, *l)), cfg.batch_size) {
            Ok(l) => l,
            Err(e) => {
                held.release_all(ctx);
                return Err(numeric(e));
            }
        };
        let record = LossRecord {
            step: k,
            loss,
            completed_unix_ms: super::plan::unix_ms(),
        };
        let written = ctx
            .store
            .put_plain(&loss_key(&task.job_id, k), serde_json::to_vec(&record).expect("json"))
            .and_then(|()| ctx.store.put_versioned(&key, k + 1, snap.encode()));
        match written {
            // A conflict means another reduce of this step won; same result.
            Ok(()) | Err(Error::VersionConflict { .. }) => {}
            Err(e) => {
                held.release_all(ctx);
                return Err(e);
            }
        }
        for (id, _) in held.keep.values() {
            let _ = ctx.broker.ack(*id);
        }
        for id in held.deferred {
            let _ = ctx.broker.release(id);
        }
        Ok(())
    }
}

/// Map and reduce handlers sharing one job cache.
pub fn training_handlers() -> HandlerTable {
    let cache = Arc::new(JobCache::default());
    HandlerTable::new()
        .with(&TaskKind::Map, Arc::new(MapHandler::new(cache.clone())))
        .with(&TaskKind::Reduce, Arc::new(ReduceHandler::new(cache)))
}
