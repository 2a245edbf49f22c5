//! The arithmetic of one training step, shared by the map/reduce handlers
//! and the sequential trainer so both walk the exact same floating-point
//! path.

use super::Dataset;
use crate::error::Result;
use crate::nn::{backward, cross_entropy, forward, rmsprop_step, Gradients, ModelParams, ModelSnapshot, Sample};

/// Gradient of the summed loss over `samples`, and that loss sum.
pub fn minibatch_gradient(params: &ModelParams, samples: &[Sample]) -> Result<(Gradients, f64)> {
    let pass = forward(params, samples)?;
    Ok(backward(params, samples, &pass)?)
}

/// Sums the mini-batch gradients and losses in the order given, then takes
/// one RMSprop step normalized by `batch_size`. Returns the batch mean loss.
pub fn apply_accumulated<'a>(
    snapshot: &mut ModelSnapshot,
    parts: impl IntoIterator<Item = (&'a Gradients, f64)>,
    batch_size: usize,
) -> Result<f64> {
    let config = *snapshot.params.config();
    let mut total = Gradients::zeros(config);
    let mut loss_sum = 0.0;
    for (g, l) in parts {
        if g.config() != &config {
            return Err(crate::nn::NnError::ShapeMismatch("gradient config differs".into()).into());
        }
        for (acc, x) in total.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *acc += *x;
        }
        loss_sum += l;
    }
    rmsprop_step(&mut snapshot.params, &mut snapshot.optimizer, &total, batch_size)?;
    Ok(loss_sum / batch_size as f64)
}

/// Mean cross-entropy of `params` over the given examples.
pub fn evaluate_loss(params: &ModelParams, dataset: &Dataset, indices: impl IntoIterator<Item = usize>) -> Result<f64> {
    let samples = dataset.samples(indices);
    let targets: Vec<usize> = samples.iter().map(|s| s.target as usize).collect();
    let pass = forward(params, &samples)?;
    Ok(cross_entropy(&pass.logits, &targets)?.mean)
}
