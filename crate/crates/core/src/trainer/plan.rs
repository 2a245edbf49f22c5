use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{build_dataset, TrainingConfig};
use crate::client::{QueueClient, StoreClient};
use crate::error::{Error, Result};
use crate::job::{JobSpec, QueueBindings, TaskEnvelope, TaskKind};
use crate::nn::{init_params, ModelParams, ModelSnapshot};

/// Everything a worker needs to know about a job, stored as JSON under
/// `<job>/meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobMeta {
    pub job_id: String,
    pub training: TrainingConfig,
    pub total_steps: u64,
    pub queues: QueueBindings,
    pub created_unix_ms: u64,
}

/// Payload of a map task: the global example indices of one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapPayload {
    pub step: u64,
    pub minibatch_index: u32,
    pub samples: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducePayload {
    pub step: u64,
}

/// Step `k` owns examples `[k*B, (k+1)*B)`; its mini-batch `j` owns
/// `[k*B + j*m, k*B + (j+1)*m)`.
pub fn minibatch_indices(cfg: &TrainingConfig, step: usize, minibatch: usize) -> std::ops::Range<usize> {
    let start = step * cfg.batch_size + minibatch * cfg.minibatch_size;
    start..start + cfg.minibatch_size
}

pub fn step_indices(cfg: &TrainingConfig, step: usize) -> std::ops::Range<usize> {
    step * cfg.batch_size..(step + 1) * cfg.batch_size
}

/// The full task graph of a job: per step, `K` map tasks and one reduce
/// task, all targeting model version `k`. Task ids are assigned
/// sequentially in that order.
pub fn plan_tasks(job_id: &str, cfg: &TrainingConfig) -> Vec<TaskEnvelope> {
    let k = cfg.minibatches_to_accumulate;
    let mut tasks = Vec::with_capacity(cfg.total_steps() * (k + 1));
    let mut next_id = 0u64;
    for step in 0..cfg.total_steps() {
        for j in 0..k {
            let payload = MapPayload {
                step: step as u64,
                minibatch_index: j as u32,
                samples: minibatch_indices(cfg, step, j).map(|i| i as u64).collect(),
            };
            tasks.push(
                TaskEnvelope::new(next_id, job_id, TaskKind::Map, serde_json::to_vec(&payload).expect("json"))
                    .with_version(step as u64)
                    .with_max_duration(cfg.task_max_duration_ms),
            );
            next_id += 1;
        }
        let payload = ReducePayload { step: step as u64 };
        tasks.push(
            TaskEnvelope::new(next_id, job_id, TaskKind::Reduce, serde_json::to_vec(&payload).expect("json"))
                .with_version(step as u64)
                .with_max_duration(cfg.task_max_duration_ms),
        );
        next_id += 1;
    }
    tasks
}

#[derive(Debug, Clone)]
pub struct JobPlan {
    pub meta: JobMeta,
    pub initial_params: ModelParams,
    pub map_tasks: usize,
    pub reduce_tasks: usize,
}

impl JobPlan {
    pub fn total_tasks(&self) -> usize {
        self.map_tasks + self.reduce_tasks
    }
}

pub(crate) fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// The initiator: stores the corpus, the job metadata and model version 0,
/// then publishes every map and reduce task.
///
/// `initial` overrides the seeded initial weights.
pub fn plan_job(
    spec: &JobSpec,
    corpus: &str,
    initial: Option<ModelParams>,
    broker: &dyn QueueClient,
    store: &dyn StoreClient,
) -> Result<JobPlan> {
    let cfg = &spec.training;
    cfg.validate()?;
    let dataset = build_dataset(corpus, cfg)?;
    let model_cfg = cfg.model_config(dataset.vocab_size());
    let params = match initial {
        Some(p) if p.config() != &model_cfg => {
            return Err(Error::InvalidConfig("initial params do not match the corpus vocabulary".into()))
        }
        Some(p) => p,
        None => init_params(model_cfg, cfg.init_seed)?,
    };
    let meta = JobMeta {
        job_id: spec.job_id.clone(),
        training: cfg.clone(),
        total_steps: cfg.total_steps() as u64,
        queues: spec.queues.clone(),
        created_unix_ms: unix_ms(),
    };
    let init_failed = |e: Error| Error::JobInitFailed(e.to_string());

    broker.ensure_queue(&spec.queues.tasks).map_err(init_failed)?;
    broker.ensure_queue(&spec.queues.results).map_err(init_failed)?;
    store
        .put_plain(&spec.corpus_key(), corpus.as_bytes().to_vec())
        .map_err(init_failed)?;
    store
        .put_plain(&spec.meta_key(), serde_json::to_vec(&meta).expect("json"))
        .map_err(init_failed)?;
    let snapshot = ModelSnapshot::new(params.clone(), cfg.optimizer());
    store
        .put_versioned(&spec.model_key(), 0, snapshot.encode())
        .map_err(init_failed)?;

    let tasks = plan_tasks(&spec.job_id, cfg);
    for t in tasks {
        broker.publish(&spec.queues.tasks, t).map_err(init_failed)?;
    }
    let steps = cfg.total_steps();
    Ok(JobPlan {
        meta,
        initial_params: params,
        map_tasks: steps * cfg.minibatches_to_accumulate,
        reduce_tasks: steps,
    })
}

pub fn load_meta(store: &dyn StoreClient, job_id: &str) -> Result<JobMeta> {
    let raw = store.get_plain(&crate::job::meta_key(job_id))?;
    serde_json::from_slice(&raw).map_err(|e| Error::Protocol(format!("job meta: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::Broker;
    use crate::job::QueueName;
    use crate::store::DataStore;

    #[test]
    fn reference_job_task_counts() {
        let cfg = TrainingConfig::reference();
        let tasks = plan_tasks("j", &cfg);
        assert_eq!(tasks.len(), 1360);
        assert_eq!(tasks.iter().filter(|t| t.kind == TaskKind::Map).count(), 1280);
        assert_eq!(tasks.iter().filter(|t| t.kind == TaskKind::Reduce).count(), 80);
        assert!(tasks.iter().enumerate().all(|(i, t)| t.task_id == i as u64));
    }

    #[test]
    fn single_step_job() {
        let cfg = TrainingConfig {
            epochs: 1,
            examples_per_epoch: 128,
            ..TrainingConfig::reference()
        };
        let tasks = plan_tasks("j", &cfg);
        assert_eq!(tasks.len(), 17);
        assert_eq!(tasks.last().unwrap().kind, TaskKind::Reduce);
        let p: MapPayload = serde_json::from_slice(&tasks[3].payload).unwrap();
        assert_eq!(p.samples, (24..32).collect::<Vec<u64>>());
    }

    #[test]
    fn replanning_is_byte_identical() {
        let cfg = TrainingConfig::reference();
        let a: Vec<_> = plan_tasks("j", &cfg).iter().map(crate::job::encode_envelope).collect();
        let b: Vec<_> = plan_tasks("j", &cfg).iter().map(crate::job::encode_envelope).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn minibatches_tile_the_batch() {
        let cfg = TrainingConfig::reference();
        let mut covered: Vec<usize> = (0..16).flat_map(|j| minibatch_indices(&cfg, 3, j)).collect();
        covered.sort();
        assert_eq!(covered, step_indices(&cfg, 3).collect::<Vec<_>>());
    }

    #[test]
    fn plan_job_stores_model_and_publishes() {
        let broker = Broker::new();
        let store = DataStore::new();
        let cfg = TrainingConfig {
            epochs: 1,
            examples_per_epoch: 16,
            batch_size: 16,
            minibatch_size: 4,
            minibatches_to_accumulate: 4,
            sample_length: 8,
            hidden_units: 4,
            ..TrainingConfig::reference()
        };
        let spec = JobSpec::new("job", cfg);
        let corpus = crate::trainer::synthetic_source(2_000, 1);
        let plan = plan_job(&spec, &corpus, None, &broker, &store).unwrap();
        assert_eq!(plan.total_tasks(), 5);
        assert_eq!(broker.depth(&QueueName::initial()).unwrap().pending, 5);
        assert_eq!(store.get_versioned("job/model").unwrap().version, 0);
        assert_eq!(load_meta(&store, "job").unwrap().total_steps, 1);
        // The same job id cannot be planned twice.
        assert!(matches!(
            plan_job(&spec, &corpus, None, &broker, &store),
            Err(Error::JobInitFailed(_))
        ));
    }
}
