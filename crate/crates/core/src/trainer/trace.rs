use std::io::Write;

use serde::{Deserialize, Serialize};

use super::plan::JobMeta;
use crate::client::StoreClient;
use crate::error::{Error, Result};
use crate::job::{loss_key, TaskKind};

/// Written by the reduce task of step `step` under `<job>/loss/<step>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub completed_unix_ms: u64,
}

/// One row of a loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    /// Model version produced by this step.
    pub model_version: u64,
    pub wall_ms: u64,
}

/// Collects the per-step losses of a distributed job. Fails if a step has
/// no record yet.
pub fn read_loss_trace(store: &dyn StoreClient, meta: &JobMeta) -> Result<Vec<LossPoint>> {
    let per_epoch = meta.training.steps_per_epoch() as u64;
    (0..meta.total_steps)
        .map(|k| {
            let raw = store.get_plain(&loss_key(&meta.job_id, k))?;
            let rec: LossRecord =
                serde_json::from_slice(&raw).map_err(|e| Error::Protocol(format!("loss record: {e}")))?;
            Ok(LossPoint {
                step: k,
                epoch: k / per_epoch,
                loss: rec.loss,
                model_version: k + 1,
                wall_ms: rec.completed_unix_ms.saturating_sub(meta.created_unix_ms),
            })
        })
        .collect()
}

/// CSV with header `step,epoch,loss,model_version,wall_ms`.
pub fn write_trace_csv<W: Write>(out: W, trace: &[LossPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in trace {
        w.serialize(p).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub const MAP_RESULT_KIND: &str = "map-result";

pub fn map_result_kind() -> TaskKind {
    TaskKind::Custom(MAP_RESULT_KIND.into())
}
