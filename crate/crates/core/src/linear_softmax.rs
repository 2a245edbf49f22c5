//! A deliberately small custom task: the gradient of multinomial logistic
//! regression on a handful of rows. Lightweight clients (a browser tab, a
//! script) can implement it in a few lines and join a job alongside native
//! workers.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::QueueClient;
use crate::error::{Error, Result};
use crate::job::{QueueName, TaskEnvelope, TaskKind};
use crate::nn::softmax;
use crate::worker::{TaskContext, TaskHandler};

pub const TASK_KIND: &str = "linear-softmax-grad";
pub const RESULT_KIND: &str = "linear-softmax-result";

pub fn task_kind() -> TaskKind {
    TaskKind::Custom(TASK_KIND.into())
}

/// `weights` is row-major `[features, classes]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxTask {
    pub features: usize,
    pub classes: usize,
    pub weights: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub results_queue: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxResult {
    pub task_id: u64,
    /// Summed over the rows, same layout as the weights.
    pub gradient: Vec<f64>,
    pub loss_sum: f64,
}

impl LinearSoftmaxTask {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::MalformedEnvelope(m.into()));
        if self.weights.len() != self.features * self.classes {
            return bad("weights do not match features x classes");
        }
        if self.x.len() != self.y.len() {
            return bad("rows and labels differ in count");
        }
        if self.x.iter().any(|r| r.len() != self.features) || self.y.iter().any(|&c| c >= self.classes) {
            return bad("row width or label out of range");
        }
        Ok(())
    }
}

/// Gradient of the summed cross-entropy `-log softmax(x W)[y]` w.r.t. `W`.
pub fn gradient(t: &LinearSoftmaxTask) -> Result<(Vec<f64>, f64)> {
    t.validate()?;
    let (d, c) = (t.features, t.classes);
    let mut grad = vec![0.0; d * c];
    let mut loss = 0.0;
    for (row, &label) in t.x.iter().zip(&t.y) {
        let logits: Vec<f64> = (0..c)
            .map(|k| (0..d).map(|i| row[i] * t.weights[i * c + k]).sum())
            .collect();
        let p = softmax(&logits);
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        for k in 0..c {
            let delta = p[k] - if k == label { 1.0 } else { 0.0 };
            for i in 0..d {
                grad[i * c + k] += row[i] * delta;
            }
        }
    }
    Ok((grad, loss))
}

pub struct LinearSoftmaxHandler;

impl TaskHandler for LinearSoftmaxHandler {
    fn handle(&self, ctx: &TaskContext<'_>, task: &TaskEnvelope) -> Result<()> {
        let t: LinearSoftmaxTask =
            serde_json::from_slice(&task.payload).map_err(|e| Error::MalformedEnvelope(e.to_string()))?;
        let (gradient, loss_sum) = gradient(&t)?;
        let result = LinearSoftmaxResult {
            task_id: task.task_id,
            gradient,
            loss_sum,
        };
        let out = TaskEnvelope::new(
            task.task_id,
            &task.job_id,
            TaskKind::Custom(RESULT_KIND.into()),
            serde_json::to_vec(&result).expect("json"),
        );
        ctx.broker.publish(&QueueName::new(t.results_queue)?, out)
    }
}

pub fn handler() -> Arc<dyn TaskHandler> {
    Arc::new(LinearSoftmaxHandler)
}

/// Publishes `n_tasks` seeded tasks of `rows` rows each against one fixed
/// weight matrix.
pub fn publish_job(
    broker: &dyn QueueClient,
    job_id: &str,
    tasks: &QueueName,
    results: &QueueName,
    n_tasks: u64,
    rows: usize,
    seed: u64,
) -> Result<Vec<LinearSoftmaxTask>> {
    let (d, c) = (4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..d * c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    broker.ensure_queue(tasks)?;
    broker.ensure_queue(results)?;
    let mut out = Vec::new();
    for id in 0..n_tasks {
        let t = LinearSoftmaxTask {
            features: d,
            classes: c,
            weights: weights.clone(),
            x: (0..rows).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
            y: (0..rows).map(|_| rng.gen_range(0..c)).collect(),
            results_queue: results.to_string(),
        };
        let env = TaskEnvelope::new(id, job_id, task_kind(), serde_json::to_vec(&t).expect("json"));
        broker.publish(tasks, env)?;
        out.push(t);
    }
    Ok(out)
}

/// Drains result messages, keeping the first per task id.
pub fn collect_results(
    broker: &dyn QueueClient,
    results: &QueueName,
    worker_id: &str,
) -> Result<BTreeMap<u64, LinearSoftmaxResult>> {
    let mut out = BTreeMap::new();
    while let Some(lease) = broker.fetch(results, worker_id)? {
        let r: LinearSoftmaxResult =
            serde_json::from_slice(&lease.task.payload).map_err(|e| Error::MalformedEnvelope(e.to_string()))?;
        out.entry(r.task_id).or_insert(r);
        broker.ack(lease.lease_id)?;
    }
    Ok(out)
}
