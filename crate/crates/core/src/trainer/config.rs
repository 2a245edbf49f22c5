use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::job::DEFAULT_MAX_DURATION_MS;
use crate::nn::{ModelConfig, RmsPropConfig};

/// Hyperparameters of one training job.
///
/// `minibatch_size * minibatches_to_accumulate` must equal `batch_size`:
/// each optimizer step consumes one batch, split into that many map tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub minibatches_to_accumulate: usize,
    pub examples_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_decay")]
    pub rmsprop_decay: f64,
    #[serde(default = "default_epsilon")]
    pub rmsprop_epsilon: f64,
    pub sample_length: usize,
    pub hidden_units: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    /// Seeds the window start offsets of the sample table.
    pub shuffle_seed: u64,
    /// Seeds the initial weights.
    pub init_seed: u64,
    /// Lease length of every map and reduce task.
    #[serde(default = "default_max_duration")]
    pub task_max_duration_ms: u64,
    /// Artificial compute time added to every mini-batch gradient, for
    /// timing experiments. Zero in normal use.
    #[serde(default)]
    pub simulated_minibatch_delay_ms: u64,
}

fn default_decay() -> f64 {
    RmsPropConfig::default().decay
}
fn default_epsilon() -> f64 {
    RmsPropConfig::default().epsilon
}
fn default_layers() -> usize {
    2
}
fn default_max_duration() -> u64 {
    DEFAULT_MAX_DURATION_MS
}

impl TrainingConfig {
    /// Batch 128 split into 16 mini-batches of 8, 2048 examples per epoch,
    /// 5 epochs, learning rate 0.1, 40-character windows, two layers of 50
    /// LSTM cells.
    pub fn reference() -> Self {
        TrainingConfig {
            batch_size: 128,
            minibatch_size: 8,
            minibatches_to_accumulate: 16,
            examples_per_epoch: 2048,
            epochs: 5,
            learning_rate: 0.1,
            rmsprop_decay: default_decay(),
            rmsprop_epsilon: default_epsilon(),
            sample_length: 40,
            hidden_units: 50,
            num_layers: 2,
            shuffle_seed: 1,
            init_seed: 1,
            task_max_duration_ms: DEFAULT_MAX_DURATION_MS,
            simulated_minibatch_delay_ms: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 || self.minibatch_size == 0 || self.minibatches_to_accumulate == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.minibatch_size * self.minibatches_to_accumulate != self.batch_size {
            return bad(format!(
                "minibatch_size {} x minibatches_to_accumulate {} != batch_size {}",
                self.minibatch_size, self.minibatches_to_accumulate, self.batch_size
            ));
        }
        if self.examples_per_epoch == 0 || self.examples_per_epoch % self.batch_size != 0 {
            return bad(format!(
                "examples_per_epoch {} is not a positive multiple of batch_size {}",
                self.examples_per_epoch, self.batch_size
            ));
        }
        if self.sample_length == 0 || self.hidden_units == 0 || self.num_layers == 0 {
            return bad("sample_length, hidden_units and num_layers must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_epsilon > 0.0) {
            return bad("optimizer hyperparameters out of range".into());
        }
        if self.task_max_duration_ms == 0 {
            return bad("task_max_duration_ms must be positive".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.examples_per_epoch / self.batch_size
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    pub fn total_examples(&self) -> usize {
        self.epochs * self.examples_per_epoch
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            hidden_units: self.hidden_units,
            num_layers: self.num_layers,
            sample_length: self.sample_length,
        }
    }

    pub fn optimizer(&self) -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: self.learning_rate,
            decay: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
        }
    }

    /// Same data and step count semantics, different batching: `batch_size`
    /// becomes `b`, accumulated from mini-batches of `min(b, minibatch_size)`.
    pub fn with_batch_size(&self, b: usize) -> Self {
        let m = self.minibatch_size.min(b);
        TrainingConfig {
            batch_size: b,
            minibatch_size: m,
            minibatches_to_accumulate: b / m,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_counts() {
        let c = TrainingConfig::reference();
        c.validate().unwrap();
        assert_eq!(c.steps_per_epoch(), 16);
        assert_eq!(c.total_steps(), 80);
        assert_eq!(c.total_steps() * c.minibatches_to_accumulate, 1280);
    }

    #[test]
    fn rejects_inconsistent_accumulation() {
        let mut c = TrainingConfig::reference();
        c.minibatches_to_accumulate = 15;
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::reference();
        c.examples_per_epoch = 2000;
        assert!(c.validate().is_err());
    }

    #[test]
    fn batch_size_variant() {
        let c = TrainingConfig::reference().with_batch_size(8);
        c.validate().unwrap();
        assert_eq!((c.minibatch_size, c.minibatches_to_accumulate), (8, 1));
        assert_eq!(c.total_steps(), 5 * 256);
    }

    #[test]
    fn json_defaults() {
        let json = r#"{"batch_size":16,"minibatch_size":4,"minibatches_to_accumulate":4,
            "examples_per_epoch":64,"epochs":1,"learning_rate":0.1,"sample_length":10,
            "hidden_units":8,"shuffle_seed":3,"init_seed":4}"#;
        let c: TrainingConfig = serde_json::from_str(json).unwrap();
        c.validate().unwrap();
        assert_eq!(c.num_layers, 2);
        assert_eq!(c.task_max_duration_ms, 30_000);
        assert_eq!(c.rmsprop_decay, 0.9);
    }
}
