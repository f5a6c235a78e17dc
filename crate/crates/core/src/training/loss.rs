//! Mean-reduced losses built from tape operations, so they differentiate
//! like any other part of the model.

use std::rc::Rc;

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Cross-entropy of row logits `[n, C]` against class ids.
///
/// With `class_weights` the reduction is the weighted mean
/// `sum_i w_{y_i} nll_i / sum_i w_{y_i}`.
pub fn cross_entropy(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<Var, TensorError> {
    let logp = tape.log_softmax_rows(logits)?;
    let index: Rc<[usize]> = labels.into();
    let picked = tape.pick(logp, index)?;
    match class_weights {
        None => {
            let mean = tape.mean_all(picked)?;
            tape.scale(mean, -1.0)
        }
        Some(w) => {
            let per_row: Vec<f64> = labels.iter().map(|&y| w[y]).collect();
            let total: f64 = per_row.iter().sum();
            let wv = tape.constant(Tensor::vector(per_row));
            let weighted = tape.mul(picked, wv)?;
            let sum = tape.sum_all(weighted)?;
            tape.scale(sum, -1.0 / total)
        }
    }
}

/// Binary cross-entropy on logits `[n, 1]` (or `[n]`):
/// `mean(pos_weight * y * softplus(-z) + (1 - y) * softplus(z))`.
pub fn binary_cross_entropy(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    pos_weight: f64,
) -> Result<Var, TensorError> {
    let n = labels.len();
    let z = tape.value(logits);
    if z.len() != n {
        return Err(TensorError::Shape {
            op: "binary_cross_entropy",
            lhs: z.shape().to_vec(),
            rhs: vec![n],
        });
    }
    let shape = z.shape().to_vec();
    let pos: Vec<f64> = labels
        .iter()
        .map(|&y| if y == 1 { pos_weight } else { 0.0 })
        .collect();
    let neg: Vec<f64> = labels
        .iter()
        .map(|&y| if y == 1 { 0.0 } else { 1.0 })
        .collect();
    let neg_z = tape.scale(logits, -1.0)?;
    let sp_neg = tape.softplus(neg_z)?;
    let sp_pos = tape.softplus(logits)?;
    let pos = tape.constant(Tensor::new(shape.clone(), pos)?);
    let neg = tape.constant(Tensor::new(shape, neg)?);
    let a = tape.mul(sp_neg, pos)?;
    let b = tape.mul(sp_pos, neg)?;
    let total = tape.add(a, b)?;
    tape.mean_all(total)
}

/// Mean absolute error of `pred` against `target` (same number of entries).
pub fn l1(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var, TensorError> {
    let shape = tape.shape(pred).to_vec();
    let t = tape.constant(Tensor::new(shape, target.to_vec())?);
    let diff = tape.sub(pred, t)?;
    let abs = tape.abs(diff)?;
    tape.mean_all(abs)
}

/// Inverse-frequency class weights `n / (C * n_c)`; absent classes get 0.
pub fn inverse_frequency_weights(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                n / (num_classes as f64 * c as f64)
            }
        })
        .collect()
}

/// `negatives / positives`, or 1 when either count is zero.
pub fn positive_weight(labels: &[usize]) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        1.0
    } else {
        neg as f64 / pos as f64
    }
}
