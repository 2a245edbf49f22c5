use super::NnError;

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean over the rows.
    pub mean: f64,
    pub per_sample: Vec<f64>,
    /// Sum of `per_sample`, accumulated in row order.
    pub sum: f64,
}

// -log softmax(logits)[target]. When the target is (nearly) the largest
// logit this goes through ln_1p so tiny losses keep their precision.
fn sample_loss(logits: &[f64], target: usize) -> f64 {
    let lt = logits[target];
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - lt < 30.0 {
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target)
            .map(|(_, l)| (l - lt).exp())
            .sum();
        rest.ln_1p()
    } else {
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        (max - lt) + total.ln()
    }
}

/// Categorical cross-entropy with mean reduction; per-sample losses are
/// returned as well.
pub fn cross_entropy(logits: &[Vec<f64>], targets: &[usize]) -> Result<LossOutput, NnError> {
    if logits.len() != targets.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} logit rows for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Err(NnError::ShapeMismatch("empty batch".into()));
    }
    let mut per_sample = Vec::with_capacity(targets.len());
    for (row, &t) in logits.iter().zip(targets) {
        if t >= row.len() {
            return Err(NnError::IndexOutOfRange {
                index: t,
                bound: row.len(),
            });
        }
        per_sample.push(sample_loss(row, t));
    }
    let sum = per_sample.iter().fold(0.0, |acc, l| acc + l);
    Ok(LossOutput {
        mean: sum / per_sample.len() as f64,
        per_sample,
        sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_v() {
        for v in [2usize, 5, 64] {
            let out = cross_entropy(&[vec![0.3; v]], &[v - 1]).unwrap();
            assert!((out.per_sample[0] - (v as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn dominant_target_loss_vanishes() {
        let mut row = vec![0.0; 6];
        row[2] = 50.0;
        let out = cross_entropy(&[row], &[2]).unwrap();
        assert!(out.mean < 1e-20 && out.mean > 0.0, "{}", out.mean);
    }

    #[test]
    fn matches_direct_formula() {
        let rows = vec![vec![0.2, -1.3, 2.2, 0.0], vec![-0.7, 0.4, 0.1, 3.3], vec![1.0, 1.0, -4.0, 0.5]];
        let targets = [0usize, 3, 2];
        let out = cross_entropy(&rows, &targets).unwrap();
        let mut mean = 0.0;
        for (row, &t) in rows.iter().zip(&targets) {
            let z: f64 = row.iter().map(|l| l.exp()).sum();
            let direct = -(row[t].exp() / z).ln();
            mean += direct / 3.0;
        }
        assert!((out.mean - mean).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_targets() {
        assert_eq!(
            cross_entropy(&[vec![0.0; 3]], &[3]),
            Err(NnError::IndexOutOfRange { index: 3, bound: 3 })
        );
        assert!(cross_entropy(&[vec![0.0; 3]], &[]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1000.0, -1000.0, 3.0, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
