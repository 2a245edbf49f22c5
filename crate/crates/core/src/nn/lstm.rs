use super::loss::{cross_entropy, softmax};
use super::model::{LayerOffsets, Offsets};
use super::{sigmoid, Gradients, ModelConfig, ModelParams, NnError};

/// A window of character indices and the index of the character that
/// follows it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub input: Vec<u32>,
    pub target: u32,
}

// Activations of one layer over the whole window, each `L x H` row-major.
#[derive(Debug, Clone)]
struct LayerCache {
    input_gate: Vec<f64>,
    forget_gate: Vec<f64>,
    cell_gate: Vec<f64>,
    output_gate: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
struct SampleCache {
    layers: Vec<LayerCache>,
}

/// Output of [`forward`]: one logit row per sample plus everything
/// [`backward`] needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<Vec<f64>>,
    caches: Vec<SampleCache>,
    config: ModelConfig,
}

impl ForwardPass {
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.logits.iter().map(|l| softmax(l)).collect()
    }
}

fn check_batch(cfg: &ModelConfig, batch: &[Sample]) -> Result<(), NnError> {
    if batch.is_empty() {
        return Err(NnError::ShapeMismatch("empty batch".into()));
    }
    for s in batch {
        if s.input.len() != cfg.sample_length {
            return Err(NnError::ShapeMismatch(format!(
                "window of {} characters, model expects {}",
                s.input.len(),
                cfg.sample_length
            )));
        }
        for &ix in s.input.iter().chain(std::iter::once(&s.target)) {
            if ix as usize >= cfg.vocab_size {
                return Err(NnError::IndexOutOfRange {
                    index: ix as usize,
                    bound: cfg.vocab_size,
                });
            }
        }
    }
    Ok(())
}

/// Runs every sample through the stacked LSTM and the dense output layer.
/// Samples are independent; the logits of one never depend on another.
pub fn forward(params: &ModelParams, batch: &[Sample]) -> Result<ForwardPass, NnError> {
    let cfg = *params.config();
    check_batch(&cfg, batch)?;
    let offsets = Offsets::new(&cfg);
    let w = params.as_slice();
    let mut logits = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for sample in batch {
        let (row, cache) = forward_sample(&cfg, &offsets, w, sample);
        logits.push(row);
        caches.push(cache);
    }
    Ok(ForwardPass {
        logits,
        caches,
        config: cfg,
    })
}

fn forward_sample(cfg: &ModelConfig, offsets: &Offsets, w: &[f64], sample: &Sample) -> (Vec<f64>, SampleCache) {
    let h = cfg.hidden_units;
    let steps = cfg.sample_length;
    let mut layers: Vec<LayerCache> = Vec::with_capacity(cfg.num_layers);
    let mut z = vec![0.0; 4 * h];
    for (l, lo) in offsets.layers.iter().enumerate() {
        let mut cache = LayerCache {
            input_gate: vec![0.0; steps * h],
            forget_gate: vec![0.0; steps * h],
            cell_gate: vec![0.0; steps * h],
            output_gate: vec![0.0; steps * h],
            cell: vec![0.0; steps * h],
            tanh_cell: vec![0.0; steps * h],
            hidden: vec![0.0; steps * h],
        };
        for t in 0..steps {
            z.copy_from_slice(&w[lo.bias..lo.bias + 4 * h]);
            if l == 0 {
                let row = lo.kernel + sample.input[t] as usize * 4 * h;
                for (zk, wk) in z.iter_mut().zip(&w[row..row + 4 * h]) {
                    *zk += *wk;
                }
            } else {
                let below = &layers[l - 1].hidden[t * h..(t + 1) * h];
                accumulate_matvec(&mut z, below, &w[lo.kernel..lo.kernel + lo.in_dim * 4 * h]);
            }
            if t > 0 {
                let prev = &cache.hidden[(t - 1) * h..t * h];
                accumulate_matvec(&mut z, prev, &w[lo.recurrent..lo.recurrent + h * 4 * h]);
            }
            for j in 0..h {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[h + j]);
                let c_g = z[2 * h + j].tanh();
                let o_g = sigmoid(z[3 * h + j]);
                let c_prev = if t > 0 { cache.cell[(t - 1) * h + j] } else { 0.0 };
                let c = f_g * c_prev + i_g * c_g;
                let tc = c.tanh();
                let at = t * h + j;
                cache.input_gate[at] = i_g;
                cache.forget_gate[at] = f_g;
                cache.cell_gate[at] = c_g;
                cache.output_gate[at] = o_g;
                cache.cell[at] = c;
                cache.tanh_cell[at] = tc;
                cache.hidden[at] = o_g * tc;
            }
        }
        layers.push(cache);
    }
    let top = &layers.last().expect("at least one layer").hidden[(steps - 1) * h..steps * h];
    let v = cfg.vocab_size;
    let mut logits = w[offsets.dense_bias..offsets.dense_bias + v].to_vec();
    accumulate_matvec(&mut logits, top, &w[offsets.dense_kernel..offsets.dense_kernel + h * v]);
    (logits, SampleCache { layers })
}

// out[k] += sum_j x[j] * m[j, k] for a row-major `m` of shape [x.len(), out.len()].
fn accumulate_matvec(out: &mut [f64], x: &[f64], m: &[f64]) {
    let cols = out.len();
    for (j, &xj) in x.iter().enumerate() {
        let row = &m[j * cols..(j + 1) * cols];
        for (o, mk) in out.iter_mut().zip(row) {
            *o += xj * *mk;
        }
    }
}

// out[j] = sum_k m[j, k] * dz[k]
fn matvec_transposed(out: &mut [f64], m: &[f64], dz: &[f64]) {
    let cols = dz.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &m[j * cols..(j + 1) * cols];
        *o = row.iter().zip(dz).map(|(a, b)| a * b).sum();
    }
}

// grad[j, k] += x[j] * dz[k]
fn accumulate_outer(grad: &mut [f64], x: &[f64], dz: &[f64]) {
    let cols = dz.len();
    for (j, &xj) in x.iter().enumerate() {
        let row = &mut grad[j * cols..(j + 1) * cols];
        for (g, d) in row.iter_mut().zip(dz) {
            *g += xj * *d;
        }
    }
}

/// Backpropagation through time. Returns the gradient of the summed
/// per-sample cross-entropy over the batch, together with that sum.
/// Samples are accumulated in batch order.
pub fn backward(params: &ModelParams, batch: &[Sample], pass: &ForwardPass) -> Result<(Gradients, f64), NnError> {
    let cfg = *params.config();
    if pass.config != cfg || pass.caches.len() != batch.len() {
        return Err(NnError::ShapeMismatch("forward pass does not match batch or params".into()));
    }
    check_batch(&cfg, batch)?;
    let targets: Vec<usize> = batch.iter().map(|s| s.target as usize).collect();
    let loss = cross_entropy(&pass.logits, &targets)?;

    let offsets = Offsets::new(&cfg);
    let w = params.as_slice();
    let mut grads = Gradients::zeros(cfg);
    for ((sample, cache), logits) in batch.iter().zip(&pass.caches).zip(&pass.logits) {
        backward_sample(&cfg, &offsets, w, grads.as_mut_slice(), sample, cache, logits);
    }
    if !grads.is_finite() {
        return Err(NnError::NonFinite("gradients"));
    }
    Ok((grads, loss.sum))
}

fn backward_sample(
    cfg: &ModelConfig,
    offsets: &Offsets,
    w: &[f64],
    g: &mut [f64],
    sample: &Sample,
    cache: &SampleCache,
    logits: &[f64],
) {
    let h = cfg.hidden_units;
    let v = cfg.vocab_size;
    let steps = cfg.sample_length;

    let mut dlogits = softmax(logits);
    dlogits[sample.target as usize] -= 1.0;

    let top = &cache.layers[cfg.num_layers - 1].hidden[(steps - 1) * h..steps * h];
    accumulate_outer(&mut g[offsets.dense_kernel..offsets.dense_kernel + h * v], top, &dlogits);
    for (gb, d) in g[offsets.dense_bias..offsets.dense_bias + v].iter_mut().zip(&dlogits) {
        *gb += *d;
    }

    // Gradient flowing into each layer's hidden state from above, L x H.
    let mut from_above = vec![0.0; steps * h];
    matvec_transposed(
        &mut from_above[(steps - 1) * h..],
        &w[offsets.dense_kernel..offsets.dense_kernel + h * v],
        &dlogits,
    );

    let mut dz = vec![0.0; 4 * h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for l in (0..cfg.num_layers).rev() {
        let lo: &LayerOffsets = &offsets.layers[l];
        let lc = &cache.layers[l];
        let mut to_below = if l > 0 { vec![0.0; steps * h] } else { Vec::new() };
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        dc_next.iter_mut().for_each(|x| *x = 0.0);

        for t in (0..steps).rev() {
            for j in 0..h {
                let at = t * h + j;
                let (i_g, f_g, c_g, o_g) = (lc.input_gate[at], lc.forget_gate[at], lc.cell_gate[at], lc.output_gate[at]);
                let tc = lc.tanh_cell[at];
                let c_prev = if t > 0 { lc.cell[at - h] } else { 0.0 };
                let dh = from_above[at] + dh_next[j];
                let d_out = dh * tc;
                let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
                dz[j] = dc * c_g * i_g * (1.0 - i_g);
                dz[h + j] = dc * c_prev * f_g * (1.0 - f_g);
                dz[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                dz[3 * h + j] = d_out * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }

            for (gb, d) in g[lo.bias..lo.bias + 4 * h].iter_mut().zip(&dz) {
                *gb += *d;
            }
            if l == 0 {
                let row = lo.kernel + sample.input[t] as usize * 4 * h;
                for (gk, d) in g[row..row + 4 * h].iter_mut().zip(&dz) {
                    *gk += *d;
                }
            } else {
                let below = &cache.layers[l - 1].hidden[t * h..(t + 1) * h];
                accumulate_outer(&mut g[lo.kernel..lo.kernel + lo.in_dim * 4 * h], below, &dz);
                matvec_transposed(
                    &mut to_below[t * h..(t + 1) * h],
                    &w[lo.kernel..lo.kernel + lo.in_dim * 4 * h],
                    &dz,
                );
            }
            if t > 0 {
                let prev = &lc.hidden[(t - 1) * h..t * h];
                accumulate_outer(&mut g[lo.recurrent..lo.recurrent + h * 4 * h], prev, &dz);
                matvec_transposed(&mut dh_next, &w[lo.recurrent..lo.recurrent + h * 4 * h], &dz);
            } else {
                dh_next.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        if l > 0 {
            from_above = to_below;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    fn cfg(v: usize, h: usize, l: usize, layers: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: v,
            hidden_units: h,
            num_layers: layers,
            sample_length: l,
        }
    }

    fn sample(l: usize, v: usize, seed: u32) -> Sample {
        Sample {
            input: (0..l as u32).map(|t| (t * 7 + seed * 3) % v as u32).collect(),
            target: (seed * 5 + 1) % v as u32,
        }
    }

    #[test]
    fn zero_params_give_uniform_softmax() {
        let c = cfg(7, 4, 5, 2);
        let p = ModelParams::zeros(c);
        let pass = forward(&p, &[sample(5, 7, 1), sample(5, 7, 2)]).unwrap();
        for probs in pass.probabilities() {
            for q in probs {
                assert!((q - 1.0 / 7.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn batching_does_not_couple_samples() {
        let c = cfg(6, 3, 4, 2);
        let p = init_params(c, 4).unwrap();
        let batch: Vec<_> = (0..8).map(|s| sample(4, 6, s)).collect();
        let all = forward(&p, &batch).unwrap();
        let single = forward(&p, &batch[5..6]).unwrap();
        assert_eq!(all.logits[5], single.logits[0]);
    }

    #[test]
    fn softmax_normalized() {
        let c = cfg(9, 5, 6, 2);
        let p = init_params(c, 8).unwrap();
        let pass = forward(&p, &[sample(6, 9, 0), sample(6, 9, 4)]).unwrap();
        for probs in pass.probabilities() {
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_inconsistent_batches() {
        let c = cfg(4, 2, 3, 1);
        let p = ModelParams::zeros(c);
        assert!(matches!(forward(&p, &[]), Err(NnError::ShapeMismatch(_))));
        assert!(matches!(forward(&p, &[sample(2, 4, 0)]), Err(NnError::ShapeMismatch(_))));
        let bad = Sample {
            input: vec![0, 1, 4],
            target: 0,
        };
        assert!(matches!(forward(&p, &[bad]), Err(NnError::IndexOutOfRange { .. })));
    }

    #[test]
    fn backward_is_additive_over_batches() {
        let c = cfg(5, 3, 4, 2);
        let p = init_params(c, 2).unwrap();
        let a = sample(4, 5, 1);
        let b = sample(4, 5, 2);
        let grad = |batch: &[Sample]| backward(&p, batch, &forward(&p, batch).unwrap()).unwrap();
        let (gab, lab) = grad(&[a.clone(), b.clone()]);
        let (ga, la) = grad(&[a]);
        let (gb, lb) = grad(&[b]);
        assert!((lab - (la + lb)).abs() < 1e-12);
        for ((x, y), z) in gab.as_slice().iter().zip(ga.as_slice()).zip(gb.as_slice()) {
            assert!((x - (y + z)).abs() < 1e-10);
        }
    }

    #[test]
    fn confident_correct_prediction_has_tiny_gradient() {
        let c = cfg(4, 2, 3, 1);
        let mut p = ModelParams::zeros(c);
        // A dense bias of +60 on the target class drives its probability to 1.
        let bias = c.layout().get("dense/bias").unwrap().offset;
        p.as_mut_slice()[bias + 2] = 60.0;
        let batch = [Sample {
            input: vec![0, 1, 3],
            target: 2,
        }];
        let (g, loss) = backward(&p, &batch, &forward(&p, &batch).unwrap()).unwrap();
        assert!(loss < 1e-20);
        assert!(g.l2_norm() < 1e-8);
    }

    #[test]
    fn backward_is_deterministic() {
        let c = cfg(6, 4, 5, 2);
        let p = init_params(c, 77).unwrap();
        let batch: Vec<_> = (0..4).map(|s| sample(5, 6, s)).collect();
        let run = || backward(&p, &batch, &forward(&p, &batch).unwrap()).unwrap();
        let (g1, l1) = run();
        let (g2, l2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert!(g1.as_slice().iter().zip(g2.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
