//! Trains the same small job sequentially and on a pool of in-process
//! workers, then compares the results bit for bit.

use vgrid::harness::{run_experiment, ChurnSchedule, Experiment};
use vgrid::trainer::{sequential_train, synthetic_source, TrainingConfig};

fn main() -> vgrid::error::Result<()> {
    let cfg = TrainingConfig {
        batch_size: 32,
        minibatch_size: 4,
        minibatches_to_accumulate: 8,
        examples_per_epoch: 256,
        epochs: 2,
        sample_length: 20,
        hidden_units: 12,
        ..TrainingConfig::reference()
    };
    let corpus = synthetic_source(20_000, 3);

    let seq = sequential_train(&cfg, &corpus, None)?;
    println!("sequential: {} steps in {:.2}s", seq.trace.len(), seq.elapsed.as_secs_f64());

    let workers = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let res = run_experiment(&Experiment::new(cfg, corpus), &ChurnSchedule::sync_start(workers))?;
    println!("{workers} workers: {:.0} ms", res.runtime_ms);

    for (a, b) in seq.trace.iter().zip(&res.trace) {
        println!("step {:>2}  loss {:.6}  {:.6}", a.step, a.loss, b.loss);
    }
    let same = seq.params().as_slice().iter().zip(res.final_params.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("final parameters identical: {same}");
    println!("final loss {:?}", res.final_loss);
    Ok(())
}
