//! Kills half the workers partway through a job. Their leases expire, the
//! tasks are redelivered, and the final model still matches the sequential
//! run exactly.

use vgrid::harness::{run_experiment, ChurnSchedule, Experiment, LeaveMode};
use vgrid::trainer::{sequential_train, synthetic_source, TrainingConfig};

fn main() -> vgrid::error::Result<()> {
    let cfg = TrainingConfig {
        batch_size: 32,
        minibatch_size: 4,
        minibatches_to_accumulate: 8,
        examples_per_epoch: 256,
        epochs: 1,
        sample_length: 20,
        hidden_units: 12,
        simulated_minibatch_delay_ms: 20,
        task_max_duration_ms: 500,
        ..TrainingConfig::reference()
    };
    let corpus = synthetic_source(20_000, 5);

    let mut churn = ChurnSchedule::sync_start(8);
    for (w, at) in [(1, 30), (3, 60), (5, 90), (7, 120)] {
        churn = churn.with_departure(w, at, LeaveMode::Kill);
    }
    let res = run_experiment(&Experiment::new(cfg.clone(), corpus.clone()), &churn)?;
    let seq = sequential_train(&cfg, &corpus, None)?;

    for r in &res.reports {
        println!("{}: {} tasks, exit {:?}", r.worker_id, r.tasks_done, r.exit);
    }
    let twice = res.map_executions().values().filter(|&&n| n > 1).count();
    println!("redeliveries {}, map tasks completed more than once {twice}", res.task_stats.redelivered);
    println!("identical to sequential: {}", res.final_params == *seq.params());
    Ok(())
}
