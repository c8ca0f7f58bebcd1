//! Mini-batch Adam loop shared by the CNN and the LSTM.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::nn::{accumulate, l2_penalty, AdamConfig, AdamState, NnError, Parameterized, Tensor};
use crate::seed;

/// Samples per gradient work item. Fixed so the reduction order, and with it
/// every floating-point result, does not depend on the thread count.
const GRAD_CHUNK: usize = 64;
const PREDICT_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    /// Running accuracy over the epoch's mini-batches, before each update.
    pub train_acc: f64,
    pub dev_acc: Option<f64>,
}

pub(crate) trait DeepNet: Parameterized + Sync {
    fn sample_len(&self) -> usize;

    /// Logits `[b * 26]` for `b` samples laid out back to back.
    fn logits(&self, x: &[f64], b: usize) -> Result<Vec<f64>, NnError>;

    /// Summed cross-entropy over the chunk, gradients of that sum, and the
    /// logits the forward pass produced.
    fn chunk_grads(&self, x: &[f64], y: &[usize]) -> Result<(f64, Vec<Tensor>, Vec<f64>), NnError>;
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn predict_classes<M: DeepNet>(model: &M, x: &[Vec<f64>]) -> Result<Vec<usize>, ClassifierError> {
    let parts: Vec<Result<Vec<usize>, NnError>> = x
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let flat: Vec<f64> = chunk.iter().flatten().copied().collect();
            let logits = model.logits(&flat, chunk.len())?;
            Ok(logits.chunks_exact(crate::NUM_CLASSES).map(argmax).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(x.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub(crate) struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub l2: f64,
}

/// Mean cross-entropy (plus `l2·Σ‖W‖²` over weights) minimized with Adam.
pub(crate) fn train<M: DeepNet>(
    model: &mut M,
    x: &[Vec<f64>],
    y: &[usize],
    dev: Option<(&[Vec<f64>], &[usize])>,
    opts: &TrainOptions,
    seed: u64,
) -> Result<Vec<EpochPoint>, ClassifierError> {
    if x.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let len = model.sample_len();
    if let Some(bad) = x.iter().find(|r| r.len() != len) {
        return Err(ClassifierError::Shape(format!("sample of length {} where {len} expected", bad.len())));
    }
    let info = model.param_info();
    let names: Vec<String> = info.iter().map(|i| i.name.clone()).collect();
    let weight_idx: Vec<usize> = (0..info.len()).filter(|&i| info[i].is_weight).collect();
    let mut adam = AdamState::new(opts.adam, &model.params());
    let mut rng = seed::rng(seed::derive(seed, "batches"));
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut curves = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut correct = 0usize;
        for batch in order.chunks(opts.batch_size.max(1)) {
            let parts: Vec<Result<(f64, Vec<Tensor>, Vec<f64>), NnError>> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let flat: Vec<f64> = chunk.iter().flat_map(|&i| x[i].iter().copied()).collect();
                    let labels: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
                    model.chunk_grads(&flat, &labels)
                })
                .collect();
            let mut grads: Option<Vec<Tensor>> = None;
            let mut seen = 0;
            for part in parts {
                let (_, g, logits) = part?;
                for (row, &i) in logits.chunks_exact(crate::NUM_CLASSES).zip(&batch[seen..]) {
                    correct += usize::from(argmax(row) == y[i]);
                }
                seen += logits.len() / crate::NUM_CLASSES;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => accumulate(acc, &g),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(inv));
            if opts.l2 > 0.0 {
                let params = model.params();
                let weights: Vec<&Tensor> = weight_idx.iter().map(|&i| params[i]).collect();
                let (_, l2g) = l2_penalty(&weights, opts.l2);
                for (&i, g) in weight_idx.iter().zip(&l2g) {
                    grads[i].add_assign(g);
                }
            }
            adam.step(&mut model.params_mut(), &grads, &names)?;
        }
        let dev_acc = match dev {
            Some((dx, dy)) if !dx.is_empty() => {
                let pred = predict_classes(model, dx)?;
                Some(pred.iter().zip(dy).filter(|(a, b)| a == b).count() as f64 / dx.len() as f64)
            }
            _ => None,
        };
        let point = EpochPoint {
            epoch,
            train_acc: correct as f64 / x.len() as f64,
            dev_acc,
        };
        log::debug!("epoch {epoch}: train {:.4} dev {:?}", point.train_acc, point.dev_acc);
        curves.push(point);
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 26]), 0);
        assert_eq!(argmax(&[-1.0, -0.5]), 1);
    }
}
