//! Central finite differences over the summed batch loss: an oracle for
//! [`backward`](super::backward) that shares nothing with it but the
//! forward pass.

use super::loss::cross_entropy;
use super::lstm::{forward, Sample};
use super::{Gradients, ModelParams, NnError};

fn loss_sum(params: &ModelParams, batch: &[Sample], targets: &[usize]) -> Result<f64, NnError> {
    let pass = forward(params, batch)?;
    Ok(cross_entropy(&pass.logits, targets)?.sum)
}

/// `(L(w + h e_i) - L(w - h e_i)) / 2h` for every parameter `i`.
pub fn finite_difference_gradient(params: &ModelParams, batch: &[Sample], step: f64) -> Result<Gradients, NnError> {
    let targets: Vec<usize> = batch.iter().map(|s| s.target as usize).collect();
    let mut probe = params.clone();
    let mut out = Gradients::zeros(*params.config());
    for i in 0..params.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let up = loss_sum(&probe, batch, &targets)?;
        probe.as_mut_slice()[i] = orig - step;
        let down = loss_sum(&probe, batch, &targets)?;
        probe.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// `|a - b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| relative_error(*x, *y))
        .fold(0.0, f64::max)
}
