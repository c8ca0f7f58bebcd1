use super::{shape_err, NnError, Tensor};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of `softmax(logits)` against a one-hot (or any
/// probability) `target`. Returns the loss and `softmax(logits) - target`.
pub fn softmax_cross_entropy(logits: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if logits.shape().len() != 1 || logits.shape() != target.shape() {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("target shaped like logits {:?}", logits.shape()),
            target.shape(),
        ));
    }
    let lse = log_sum_exp(logits.data());
    let loss = logits
        .data()
        .iter()
        .zip(target.data())
        .filter(|(_, t)| **t != 0.0)
        .map(|(z, t)| -t * (z - lse))
        .sum::<f64>();
    let p = softmax(logits.data());
    let grad: Vec<f64> = p.iter().zip(target.data()).map(|(p, t)| p - t).collect();
    Ok((loss, Tensor::from_vec(logits.shape(), grad)?))
}

/// Mean cross-entropy over a `[batch, C]` logit matrix with integer class
/// targets. The gradient is that of the mean.
pub fn softmax_cross_entropy_batch(logits: &Tensor, classes: &[usize]) -> Result<(f64, Tensor), NnError> {
    let (b, c) = match logits.shape() {
        [b, c] if *b == classes.len() => (*b, *c),
        s => {
            return Err(shape_err(
                "softmax_cross_entropy_batch",
                format!("[{}, C]", classes.len()),
                s,
            ))
        }
    };
    let mut grad = vec![0.0; b * c];
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.data().chunks_exact(c).zip(classes).enumerate() {
        loss += log_sum_exp(row) - row[y];
        let p = softmax(row);
        let g = &mut grad[i * c..(i + 1) * c];
        for (k, (g, p)) in g.iter_mut().zip(p).enumerate() {
            *g = (p - if k == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::from_vec(&[b, c], grad)?))
}

/// `lambda * Σ‖W‖²` over `weights` and its gradient `2·lambda·W`. Callers
/// pass weights only; biases are not regularized.
pub fn l2_penalty(weights: &[&Tensor], lambda: f64) -> (f64, Vec<Tensor>) {
    let loss = lambda * weights.iter().map(|w| w.sum_squares()).sum::<f64>();
    let grads = weights
        .iter()
        .map(|w| {
            let mut g = (*w).clone();
            g.scale(2.0 * lambda);
            g
        })
        .collect();
    (loss, grads)
}
