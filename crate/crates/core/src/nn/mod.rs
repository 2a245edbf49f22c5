//! A small, dependency-free character-level LSTM: stacked LSTM layers
//! followed by a dense softmax layer, trained with categorical
//! cross-entropy, full backpropagation through time and RMSprop.
//!
//! All arithmetic is `f64` and every reduction runs in a fixed order, so a
//! forward/backward pass is bit-reproducible for identical inputs.

mod gradcheck;
mod loss;
mod lstm;
mod model;
mod rmsprop;
mod tensor;

use thiserror::Error;

pub use gradcheck::{finite_difference_gradient, max_relative_error, relative_error};
pub use loss::{cross_entropy, softmax, LossOutput};
pub use lstm::{backward, forward, ForwardPass, Sample};
pub use model::{init_params, unflatten, Gradients, Layout, ModelConfig, ModelParams, ModelSnapshot, TensorSpec};
pub use rmsprop::{rmsprop_step, OptimizerState, RmsPropConfig};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for {bound} classes")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("corrupt model snapshot: {0}")]
    CorruptSnapshot(String),
}

pub fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `None` when the byte count is not a multiple of eight.
pub fn f64s_from_le_bytes(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    )
}

/// `acc += other`, elementwise, left to right.
pub(crate) fn add_assign(acc: &mut [f64], other: &[f64]) {
    debug_assert_eq!(acc.len(), other.len());
    for (a, b) in acc.iter_mut().zip(other) {
        *a += *b;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
