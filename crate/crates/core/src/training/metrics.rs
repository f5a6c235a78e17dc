use serde::{Deserialize, Serialize};

use crate::graph::TaskKind;
use crate::tensor::Tensor;

/// The task metric reported for each kind of task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    WeightedAccuracy,
    F1Positive,
    Mae,
}

impl MetricKind {
    pub fn for_task(task: TaskKind) -> MetricKind {
        match task {
            TaskKind::NodeClass => MetricKind::WeightedAccuracy,
            TaskKind::GraphClass => MetricKind::Accuracy,
            TaskKind::EdgePred => MetricKind::F1Positive,
            TaskKind::GraphReg => MetricKind::Mae,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::WeightedAccuracy => "weighted_accuracy",
            MetricKind::F1Positive => "f1_positive",
            MetricKind::Mae => "mae",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != MetricKind::Mae
    }
}

/// Index of the largest entry of each row (first one on ties).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(pred.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Mean over the classes present in `labels` of each class's recall.
pub fn weighted_accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(pred.len(), labels.len());
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = vec![0usize; classes];
    let mut hit = vec![0usize; classes];
    for (&p, &y) in pred.iter().zip(labels) {
        total[y] += 1;
        if p == y {
            hit[y] += 1;
        }
    }
    let recalls: Vec<f64> = total
        .iter()
        .zip(&hit)
        .filter(|(t, _)| **t > 0)
        .map(|(&t, &h)| h as f64 / t as f64)
        .collect();
    if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

/// F1 score of class 1. Zero when there are no true positives.
pub fn f1_positive(pred: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(pred.len(), labels.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&p, &y) in pred.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if target.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / target.len() as f64
}

/// Most frequent label (smallest id on ties).
pub fn majority_class(labels: &[usize]) -> usize {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 0, 1];
        assert_eq!(accuracy(&y, &y), 1.0);
        assert_eq!(weighted_accuracy(&y, &y), 1.0);
        assert_eq!(f1_positive(&y, &y), 1.0);
    }

    #[test]
    fn all_negative_has_zero_f1() {
        let y: Vec<usize> = (0..100).map(|i| usize::from(i % 10 == 0)).collect();
        let pred = vec![0; 100];
        assert_eq!(f1_positive(&pred, &y), 0.0);
        assert_eq!(accuracy(&pred, &y), 0.9);
    }

    #[test]
    fn weighted_accuracy_averages_recalls() {
        let mut y = vec![0; 90];
        y.extend(vec![1; 10]);
        let mut pred = vec![0; 90];
        pred.extend(vec![1; 5]);
        pred.extend(vec![0; 5]);
        assert!((weighted_accuracy(&pred, &y) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn argmax_and_majority() {
        let t = Tensor::from_rows(&[vec![0.1, 0.9], vec![2.0, 2.0], vec![-1.0, -3.0]], 2).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0, 0]);
        assert_eq!(majority_class(&[2, 1, 2, 1, 0]), 1);
    }

    #[test]
    fn mae_value() {
        assert_eq!(mae(&[1.0, 2.0], &[0.0, 4.0]), 1.5);
    }
}
