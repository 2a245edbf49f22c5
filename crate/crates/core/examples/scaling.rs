//! Runtime and speedup as the pool grows, with a simulated per-minibatch
//! compute delay, and the task mix of the largest run. Writes `scaling.csv`.

use std::fs::File;

use vgrid::harness::{scaling_suite, summarize_timeline, Experiment, StartMode};
use vgrid::trainer::{synthetic_source, TrainingConfig};

fn main() -> vgrid::error::Result<()> {
    let cfg = TrainingConfig {
        batch_size: 64,
        minibatch_size: 8,
        minibatches_to_accumulate: 8,
        examples_per_epoch: 256,
        epochs: 1,
        sample_length: 16,
        hidden_units: 8,
        simulated_minibatch_delay_ms: 40,
        ..TrainingConfig::reference()
    };
    let exp = Experiment::new(cfg, synthetic_source(10_000, 1));
    let modes = [StartMode::Sync, StartMode::Async { spacing_ms: 50 }];
    let suite = scaling_suite(&exp, &[1, 2, 4, 8, 16], &modes, true)?;

    println!("sequential {:.0} ms", suite.report.sequential_ms.unwrap_or(f64::NAN));
    for row in &suite.report.rows {
        println!(
            "{:>5} n={:<2} T={:>6.0} ms  S={:.2}  E={:.2}",
            row.mode,
            row.workers,
            row.runtime_ms,
            row.speedup.unwrap_or(f64::NAN),
            row.efficiency.unwrap_or(f64::NAN),
        );
    }
    // Past K workers per step the extras mostly wait on the reduce barrier.
    let (_, biggest) = &suite.runs[suite.runs.len() / 2 - 1];
    for w in summarize_timeline(&biggest.events)?.workers {
        println!("{}: {} map, {} reduce", w.worker_id, w.count("map"), w.count("reduce"));
    }
    suite.report.write_csv(File::create("scaling.csv")?)?;
    Ok(())
}
