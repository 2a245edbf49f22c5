//! Character-level language-model training expressed as map and reduce
//! tasks, plus the sequential reference trainer.

mod config;
pub mod corpus;
mod dataset;
mod handlers;
mod plan;
mod sequential;
pub mod step;
mod trace;

pub use config::TrainingConfig;
pub use corpus::synthetic_source;
pub use dataset::{build_dataset, Dataset};
pub use handlers::{training_handlers, JobCache, JobContext, MapHandler, ReduceHandler};
pub use plan::{
    load_meta, minibatch_indices, plan_job, plan_tasks, step_indices, JobMeta, JobPlan, MapPayload, ReducePayload,
};
pub use sequential::{evaluation_indices, final_loss, sequential_train, SequentialRun};
pub use trace::{map_result_kind, read_loss_trace, write_trace_csv, LossPoint, LossRecord, MAP_RESULT_KIND};
