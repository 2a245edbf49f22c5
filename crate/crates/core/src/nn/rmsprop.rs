use serde::{Deserialize, Serialize};

use super::{Gradients, ModelParams, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 0.1,
            decay: 0.9,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub hyper: RmsPropConfig,
    /// Running average of squared gradients, one entry per parameter.
    pub cache: Vec<f64>,
}

impl OptimizerState {
    pub fn new(hyper: RmsPropConfig, len: usize) -> Self {
        OptimizerState {
            hyper,
            cache: vec![0.0; len],
        }
    }
}

/// One RMSprop update from a gradient summed over `effective_batch`
/// examples:
///
/// ```text
/// g     = grad / effective_batch
/// cache = decay * cache + (1 - decay) * g^2
/// param = param - lr * g / (sqrt(cache) + eps)
/// ```
pub fn rmsprop_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    grad: &Gradients,
    effective_batch: usize,
) -> Result<(), NnError> {
    if effective_batch == 0 {
        return Err(NnError::ShapeMismatch("effective batch must be positive".into()));
    }
    if grad.len() != params.len() || state.cache.len() != params.len() {
        return Err(NnError::ShapeMismatch(format!(
            "params {}, grads {}, cache {}",
            params.len(),
            grad.len(),
            state.cache.len()
        )));
    }
    let RmsPropConfig {
        learning_rate,
        decay,
        epsilon,
    } = state.hyper;
    let scale = effective_batch as f64;
    for ((p, c), g) in params
        .as_mut_slice()
        .iter_mut()
        .zip(state.cache.iter_mut())
        .zip(grad.as_slice())
    {
        let g = g / scale;
        *c = decay * *c + (1.0 - decay) * g * g;
        *p -= learning_rate * g / (c.sqrt() + epsilon);
    }
    Ok(())
}
