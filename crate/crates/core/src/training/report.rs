use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{EvalResult, MetricKind, TrainOutcome};

/// One row of the per-epoch metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub metric: MetricKind,
    pub value: f64,
    /// Wall time since the run started. Excluded from [`same_values`](Self::same_values).
    pub seconds: f64,
}

impl MetricsRecord {
    pub fn new(epoch: usize, split: &str, eval: &EvalResult, start: Instant) -> Self {
        MetricsRecord {
            epoch,
            split: split.to_string(),
            loss: eval.loss,
            metric: eval.metric,
            value: eval.value,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    /// Bitwise equality of every field except the wall time.
    pub fn same_values(&self, other: &MetricsRecord) -> bool {
        self.epoch == other.epoch
            && self.split == other.split
            && self.metric == other.metric
            && self.loss.to_bits() == other.loss.to_bits()
            && self.value.to_bits() == other.value.to_bits()
    }
}

/// CSV text with header `epoch,split,loss,metric,value,seconds`.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("epoch,split,loss,metric,value,seconds\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            r.epoch,
            r.split,
            r.loss,
            r.metric.name(),
            r.value,
            r.seconds
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> std::io::Result<()> {
    std::fs::write(path, metrics_csv(records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub value: f64,
    pub best_epoch: usize,
    pub epochs: usize,
}

/// Mean and population standard deviation of the test metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric: MetricKind,
    pub seeds: Vec<SeedSummary>,
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(outcomes: &[TrainOutcome]) -> Summary {
    let metric = outcomes
        .first()
        .map_or(MetricKind::Accuracy, |o| o.test.metric);
    let seeds: Vec<SeedSummary> = outcomes
        .iter()
        .map(|o| SeedSummary {
            seed: o.seed,
            value: o.test.value,
            best_epoch: o.best_epoch,
            epochs: o.epochs_run,
        })
        .collect();
    let n = seeds.len().max(1) as f64;
    let mean = seeds.iter().map(|s| s.value).sum::<f64>() / n;
    let var = seeds.iter().map(|s| (s.value - mean).powi(2)).sum::<f64>() / n;
    Summary {
        metric,
        seeds,
        mean,
        std: var.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let r = MetricsRecord {
            epoch: 3,
            split: "val".into(),
            loss: 0.5,
            metric: MetricKind::Mae,
            value: 0.25,
            seconds: 1.23456,
        };
        assert_eq!(
            metrics_csv(&[r]),
            "epoch,split,loss,metric,value,seconds\n3,val,0.5,mae,0.25,1.235\n"
        );
    }

    #[test]
    fn same_values_ignores_time() {
        let a = MetricsRecord {
            epoch: 1,
            split: "train".into(),
            loss: 0.1,
            metric: MetricKind::Accuracy,
            value: 0.9,
            seconds: 1.0,
        };
        let mut b = a.clone();
        b.seconds = 7.0;
        assert!(a.same_values(&b));
        b.loss = 0.1 + 1e-17;
        b.value = 0.9000000000000001;
        assert!(!a.same_values(&b));
    }
}
