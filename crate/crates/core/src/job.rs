//! Task vocabulary shared by the broker, the workers, the trainer and the
//! harness.
//!
//! Every message is a self-describing JSON object; binary payloads travel
//! base64-encoded so a browser client can parse the same frames.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::TrainingConfig;

/// Default lease length when a job does not pick one.
pub const DEFAULT_MAX_DURATION_MS: u64 = 30_000;

pub type TaskId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Map,
    Reduce,
    /// A task whose semantics are known only to the handler registered under
    /// this name.
    Custom(String),
}

impl TaskKind {
    pub fn as_wire(&self) -> String {
        match self {
            TaskKind::Map => "map".to_string(),
            TaskKind::Reduce => "reduce".to_string(),
            TaskKind::Custom(name) => format!("custom:{name}"),
        }
    }

    pub fn from_wire(s: &str) -> Result<TaskKind> {
        match s {
            "map" => Ok(TaskKind::Map),
            "reduce" => Ok(TaskKind::Reduce),
            _ => match s.strip_prefix("custom:") {
                Some(name) if !name.is_empty() => Ok(TaskKind::Custom(name.to_string())),
                _ => Err(Error::MalformedEnvelope(format!("unknown task kind `{s}`"))),
            },
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_wire())
    }
}

/// One unit of distributable work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EnvelopeWire", into = "EnvelopeWire")]
pub struct TaskEnvelope {
    pub task_id: TaskId,
    pub job_id: String,
    pub kind: TaskKind,
    pub payload: Vec<u8>,
    /// Model version the task's computation targets.
    pub required_model_version: u64,
    /// Number of leases issued for this task so far.
    pub delivery_count: u32,
    pub max_duration_ms: u64,
}

impl TaskEnvelope {
    pub fn new(task_id: TaskId, job_id: impl Into<String>, kind: TaskKind, payload: Vec<u8>) -> Self {
        TaskEnvelope {
            task_id,
            job_id: job_id.into(),
            kind,
            payload,
            required_model_version: 0,
            delivery_count: 0,
            max_duration_ms: DEFAULT_MAX_DURATION_MS,
        }
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.required_model_version = version;
        self
    }

    pub fn with_max_duration(mut self, ms: u64) -> Self {
        self.max_duration_ms = ms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_duration_ms == 0 {
            return Err(Error::MalformedEnvelope("max_duration_ms must be positive".into()));
        }
        if self.job_id.is_empty() {
            return Err(Error::MalformedEnvelope("empty job_id".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeWire {
    task_id: u64,
    job_id: String,
    kind: String,
    payload_b64: String,
    required_model_version: u64,
    delivery_count: u32,
    max_duration_ms: u64,
}

impl From<TaskEnvelope> for EnvelopeWire {
    fn from(t: TaskEnvelope) -> Self {
        EnvelopeWire {
            task_id: t.task_id,
            job_id: t.job_id,
            kind: t.kind.as_wire(),
            payload_b64: B64.encode(&t.payload),
            required_model_version: t.required_model_version,
            delivery_count: t.delivery_count,
            max_duration_ms: t.max_duration_ms,
        }
    }
}

impl TryFrom<EnvelopeWire> for TaskEnvelope {
    type Error = Error;

    fn try_from(w: EnvelopeWire) -> Result<Self> {
        let t = TaskEnvelope {
            task_id: w.task_id,
            job_id: w.job_id,
            kind: TaskKind::from_wire(&w.kind)?,
            payload: B64
                .decode(w.payload_b64.as_bytes())
                .map_err(|e| Error::MalformedEnvelope(format!("payload_b64: {e}")))?,
            required_model_version: w.required_model_version,
            delivery_count: w.delivery_count,
            max_duration_ms: w.max_duration_ms,
        };
        t.validate()?;
        Ok(t)
    }
}

pub fn encode_envelope(t: &TaskEnvelope) -> Vec<u8> {
    serde_json::to_vec(t).expect("envelope serialization is infallible")
}

pub fn decode_envelope(bytes: &[u8]) -> Result<TaskEnvelope> {
    serde_json::from_slice(bytes).map_err(|e| Error::MalformedEnvelope(e.to_string()))
}

/// Name of a broker queue. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QueueName(String);

impl QueueName {
    pub const INITIAL: &'static str = "InitialQueue";
    pub const MAP_RESULTS: &'static str = "MapResultsQueue";

    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidConfig("queue name must not be empty".into()));
        }
        Ok(QueueName(name))
    }

    pub fn initial() -> Self {
        QueueName(Self::INITIAL.to_string())
    }

    pub fn map_results() -> Self {
        QueueName(Self::MAP_RESULTS.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for QueueName {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        QueueName::new(s)
    }
}

impl From<QueueName> for String {
    fn from(q: QueueName) -> String {
        q.0
    }
}

impl fmt::Display for QueueName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for QueueName {
    /// Panics on an empty name; use [`QueueName::new`] for untrusted input.
    fn from(s: &str) -> Self {
        QueueName::new(s).expect("queue name must not be empty")
    }
}

/// Which queue holds which kind of message for a job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueBindings {
    /// Map and reduce tasks.
    pub tasks: QueueName,
    /// Gradient results produced by map tasks.
    pub results: QueueName,
}

impl Default for QueueBindings {
    fn default() -> Self {
        QueueBindings {
            tasks: QueueName::initial(),
            results: QueueName::map_results(),
        }
    }
}

/// Where a service lives: inside this process, or behind a TCP address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    #[default]
    InProcess,
    Tcp(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: String,
    #[serde(default)]
    pub queues: QueueBindings,
    pub training: TrainingConfig,
    #[serde(default)]
    pub broker: Endpoint,
    #[serde(default)]
    pub store: Endpoint,
}

impl JobSpec {
    pub fn new(job_id: impl Into<String>, training: TrainingConfig) -> Self {
        JobSpec {
            job_id: job_id.into(),
            queues: QueueBindings::default(),
            training,
            broker: Endpoint::InProcess,
            store: Endpoint::InProcess,
        }
    }

    pub fn model_key(&self) -> String {
        model_key(&self.job_id)
    }

    pub fn meta_key(&self) -> String {
        meta_key(&self.job_id)
    }

    pub fn corpus_key(&self) -> String {
        corpus_key(&self.job_id)
    }

    pub fn loss_key(&self, step: u64) -> String {
        loss_key(&self.job_id, step)
    }
}

pub fn meta_key(job_id: &str) -> String {
    format!("{job_id}/meta")
}

pub fn model_key(job_id: &str) -> String {
    format!("{job_id}/model")
}

pub fn corpus_key(job_id: &str) -> String {
    format!("{job_id}/corpus")
}

pub fn loss_key(job_id: &str, step: u64) -> String {
    format!("{job_id}/loss/{step}")
}

/// What a map task sends to the results queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GradientResultWire", into = "GradientResultWire")]
pub struct GradientResultMsg {
    pub job_id: String,
    /// Version of the model the gradient was computed against.
    pub model_version: u64,
    pub minibatch_index: u32,
    /// Flattened gradient, summed over the mini-batch.
    pub gradient: Vec<f64>,
    pub loss_sum: f64,
    pub example_count: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradientResultWire {
    job_id: String,
    model_version: u64,
    minibatch_index: u32,
    gradient_b64: String,
    loss_sum: f64,
    example_count: u32,
}

impl From<GradientResultMsg> for GradientResultWire {
    fn from(m: GradientResultMsg) -> Self {
        GradientResultWire {
            job_id: m.job_id,
            model_version: m.model_version,
            minibatch_index: m.minibatch_index,
            gradient_b64: B64.encode(crate::nn::f64s_to_le_bytes(&m.gradient)),
            loss_sum: m.loss_sum,
            example_count: m.example_count,
        }
    }
}

impl TryFrom<GradientResultWire> for GradientResultMsg {
    type Error = Error;

    fn try_from(w: GradientResultWire) -> Result<Self> {
        let raw = B64
            .decode(w.gradient_b64.as_bytes())
            .map_err(|e| Error::MalformedEnvelope(format!("gradient_b64: {e}")))?;
        let gradient = crate::nn::f64s_from_le_bytes(&raw)
            .ok_or_else(|| Error::MalformedEnvelope("gradient length not a multiple of 8".into()))?;
        if w.example_count == 0 {
            return Err(Error::MalformedEnvelope("example_count must be positive".into()));
        }
        Ok(GradientResultMsg {
            job_id: w.job_id,
            model_version: w.model_version,
            minibatch_index: w.minibatch_index,
            gradient,
            loss_sum: w.loss_sum,
            example_count: w.example_count,
        })
    }
}

impl GradientResultMsg {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("result serialization is infallible")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::MalformedEnvelope(e.to_string()))
    }
}
