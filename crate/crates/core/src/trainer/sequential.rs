use std::thread;
use std::time::{Duration, Instant};

use super::plan::{minibatch_indices, step_indices};
use super::step::{apply_accumulated, evaluate_loss, minibatch_gradient};
use super::trace::LossPoint;
use super::{build_dataset, Dataset, TrainingConfig};
use crate::error::{Error, Result};
use crate::nn::{init_params, ModelParams, ModelSnapshot};

#[derive(Debug, Clone)]
pub struct SequentialRun {
    pub initial: ModelParams,
    pub snapshot: ModelSnapshot,
    pub trace: Vec<LossPoint>,
    /// Mean loss of the final model over the last epoch's examples; `None`
    /// when no epochs ran.
    pub final_loss: Option<f64>,
    pub dataset: Dataset,
    pub elapsed: Duration,
}

impl SequentialRun {
    pub fn params(&self) -> &ModelParams {
        &self.snapshot.params
    }
}

/// Examples of the last epoch, over which final losses are reported.
pub fn evaluation_indices(cfg: &TrainingConfig) -> std::ops::Range<usize> {
    let end = cfg.total_examples();
    end.saturating_sub(cfg.examples_per_epoch)..end
}

pub fn final_loss(cfg: &TrainingConfig, dataset: &Dataset, params: &ModelParams) -> Result<Option<f64>> {
    let idx = evaluation_indices(cfg);
    if idx.is_empty() {
        return Ok(None);
    }
    evaluate_loss(params, dataset, idx).map(Some)
}

/// Single-process training at batch size `B`: per step, the same `K`
/// mini-batch gradients the map tasks would compute, summed in mini-batch
/// order, then one RMSprop step. The simulated per-mini-batch delay of the
/// config is honoured so timings compare with distributed runs.
pub fn sequential_train(cfg: &TrainingConfig, corpus: &str, initial: Option<ModelParams>) -> Result<SequentialRun> {
    cfg.validate()?;
    let dataset = build_dataset(corpus, cfg)?;
    let model_cfg = cfg.model_config(dataset.vocab_size());
    let initial = match initial {
        Some(p) if p.config() != &model_cfg => {
            return Err(Error::InvalidConfig("initial params do not match the corpus vocabulary".into()))
        }
        Some(p) => p,
        None => init_params(model_cfg, cfg.init_seed)?,
    };
    let mut snapshot = ModelSnapshot::new(initial.clone(), cfg.optimizer());
    let delay = Duration::from_millis(cfg.simulated_minibatch_delay_ms);
    let per_epoch = cfg.steps_per_epoch() as u64;
    let started = Instant::now();
    let mut trace = Vec::with_capacity(cfg.total_steps());
    for k in 0..cfg.total_steps() {
        debug_assert_eq!(step_indices(cfg, k).len(), cfg.batch_size);
        let mut parts = Vec::with_capacity(cfg.minibatches_to_accumulate);
        for j in 0..cfg.minibatches_to_accumulate {
            let samples = dataset.samples(minibatch_indices(cfg, k, j));
            parts.push(minibatch_gradient(&snapshot.params, &samples)?);
            if !delay.is_zero() {
                thread::sleep(delay);
            }
        }
        let loss = apply_accumulated(&mut snapshot, parts.iter().map(|(g, l)| (g, *l)), cfg.batch_size)?;
        trace.push(LossPoint {
            step: k as u64,
            epoch: k as u64 / per_epoch,
            loss,
            model_version: k as u64 + 1,
            wall_ms: started.elapsed().as_millis() as u64,
        });
    }
    let elapsed = started.elapsed();
    let final_loss = final_loss(cfg, &dataset, &snapshot.params)?;
    Ok(SequentialRun {
        initial,
        snapshot,
        trace,
        final_loss,
        dataset,
        elapsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{backward, forward, rmsprop_step, OptimizerState};
    use crate::trainer::synthetic_source;

    fn tiny() -> TrainingConfig {
        TrainingConfig {
            batch_size: 8,
            minibatch_size: 4,
            minibatches_to_accumulate: 2,
            examples_per_epoch: 16,
            epochs: 2,
            sample_length: 6,
            hidden_units: 5,
            ..TrainingConfig::reference()
        }
    }

    #[test]
    fn zero_epochs_keep_initial_params() {
        let cfg = TrainingConfig { epochs: 0, ..tiny() };
        let run = sequential_train(&cfg, &synthetic_source(3_000, 2), None).unwrap();
        assert_eq!(run.params(), &run.initial);
        assert!(run.trace.is_empty());
        assert_eq!(run.final_loss, None);
    }

    #[test]
    fn single_minibatch_is_a_plain_rmsprop_step() {
        let cfg = TrainingConfig {
            minibatch_size: 8,
            minibatches_to_accumulate: 1,
            epochs: 1,
            examples_per_epoch: 8,
            ..tiny()
        };
        let corpus = synthetic_source(3_000, 2);
        let run = sequential_train(&cfg, &corpus, None).unwrap();
        let samples = run.dataset.samples(0..8);
        let mut p = run.initial.clone();
        let pass = forward(&p, &samples).unwrap();
        let (g, _) = backward(&p, &samples, &pass).unwrap();
        let mut st = OptimizerState::new(cfg.optimizer(), p.len());
        rmsprop_step(&mut p, &mut st, &g, 8).unwrap();
        assert_eq!(run.params(), &p);
    }

    #[test]
    fn trace_has_one_point_per_step() {
        let run = sequential_train(&tiny(), &synthetic_source(3_000, 2), None).unwrap();
        assert_eq!(run.trace.len(), 4);
        assert_eq!(run.trace.iter().map(|p| p.epoch).collect::<Vec<_>>(), [0, 0, 1, 1]);
        assert!(run.final_loss.unwrap().is_finite());
    }
}
