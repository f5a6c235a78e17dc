//! Optimiser, learning-rate schedule, losses, metrics and the training loop.
//!
//! A run is fully determined by the dataset, the model and training
//! configurations and one run seed: the seed's `INIT` sub-stream initialises
//! the parameters and its `BATCHING` sub-stream shuffles the training split
//! every epoch. Wall-clock seconds are recorded but never feed back into the
//! computation.

mod loss;
mod metrics;
mod optim;
mod report;

pub use loss::{
    binary_cross_entropy, cross_entropy, inverse_frequency_weights, l1, positive_weight,
};
pub use metrics::{
    accuracy, argmax_rows, f1_positive, mae, majority_class, weighted_accuracy, MetricKind,
};
pub use optim::{Adam, PlateauScheduler, ScheduleEvent};
pub use report::{metrics_csv, summarize, write_metrics_csv, MetricsRecord, SeedSummary, Summary};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Dataset, Graph, GraphBatch, Labels, TaskKind};
use crate::layers::{Mode, Model, ModelConfig, ModelDims, ModelError};
use crate::rng::{streams, sub_seed, Rng};
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite value at epoch {epoch}, batch {batch}: {source}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        source: ModelError,
    },
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        match self {
            TrainError::NonFinite { .. } => true,
            TrainError::Model(m) => m.is_numerical(),
            TrainError::Config(_) => false,
        }
    }
}

fn default_lr() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    16
}
fn default_patience() -> usize {
    10
}
fn default_lr_factor() -> f64 {
    0.5
}
fn default_min_lr() -> f64 {
    1e-6
}
fn default_max_epochs() -> usize {
    1000
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Graphs per mini-batch.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Non-improving validation epochs before the learning rate is halved.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_lr_factor")]
    pub lr_factor: f64,
    /// Training stops once a reduction takes the learning rate below this.
    #[serde(default = "default_min_lr")]
    pub min_lr: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Inverse-frequency class weights for classification and a positive
    /// weight for edge prediction, both computed on the training split.
    #[serde(default = "default_true")]
    pub balance_classes: bool,
    /// Optional early exit once the epoch's training loss falls below this.
    #[serde(default)]
    pub target_train_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            batch_size: default_batch_size(),
            patience: default_patience(),
            lr_factor: default_lr_factor(),
            min_lr: default_min_lr(),
            max_epochs: default_max_epochs(),
            balance_classes: true,
            target_train_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(TrainError::Config(format!(
                "lr_factor must lie in (0, 1), got {}",
                self.lr_factor
            )));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be positive".into()));
        }
        Ok(())
    }
}

/// Loss weighting fixed from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub task: TaskKind,
    pub class_weights: Option<Vec<f64>>,
    pub pos_weight: f64,
}

impl LossSpec {
    pub fn from_training_split(train: &[Graph], dims: &ModelDims, balance: bool) -> LossSpec {
        let mut spec = LossSpec {
            task: dims.task,
            class_weights: None,
            pos_weight: 1.0,
        };
        if !balance {
            return spec;
        }
        match dims.task {
            TaskKind::NodeClass | TaskKind::GraphClass => {
                let labels: Vec<usize> = train
                    .iter()
                    .flat_map(|g| match &g.labels {
                        Labels::Node(y) => y.clone(),
                        Labels::GraphClass(c) => vec![*c],
                        _ => Vec::new(),
                    })
                    .collect();
                spec.class_weights = Some(inverse_frequency_weights(&labels, dims.out));
            }
            TaskKind::EdgePred => {
                let labels: Vec<usize> = train
                    .iter()
                    .flat_map(|g| match &g.labels {
                        Labels::Edge(y) => y.clone(),
                        _ => Vec::new(),
                    })
                    .collect();
                spec.pos_weight = positive_weight(&labels);
            }
            TaskKind::GraphReg => {}
        }
        spec
    }
}

/// Targets of one batch, in prediction-row order.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn of(batch: &GraphBatch, task: TaskKind) -> Result<Targets, TrainError> {
        let missing = || TrainError::Config(format!("batch lacks {task} labels"));
        Ok(match task {
            TaskKind::NodeClass => Targets::Classes(batch.node_labels().ok_or_else(missing)?),
            TaskKind::GraphClass => Targets::Classes(batch.graph_classes().ok_or_else(missing)?),
            TaskKind::EdgePred => Targets::Classes(batch.edge_labels().ok_or_else(missing)?),
            TaskKind::GraphReg => Targets::Values(batch.graph_values().ok_or_else(missing)?),
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(y) => y.len(),
            Targets::Values(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The task loss of `output` against `targets`.
pub fn task_loss(
    tape: &mut Tape,
    output: Var,
    targets: &Targets,
    spec: &LossSpec,
) -> Result<Var, TensorError> {
    match (spec.task, targets) {
        (TaskKind::NodeClass | TaskKind::GraphClass, Targets::Classes(y)) => {
            cross_entropy(tape, output, y, spec.class_weights.as_deref())
        }
        (TaskKind::EdgePred, Targets::Classes(y)) => {
            binary_cross_entropy(tape, output, y, spec.pos_weight)
        }
        (TaskKind::GraphReg, Targets::Values(y)) => l1(tape, output, y),
        _ => panic!("targets do not match the task"),
    }
}

/// Accumulates predictions over batches and scores them.
#[derive(Debug, Clone)]
struct Scorer {
    task: TaskKind,
    loss_sum: f64,
    items: usize,
    pred_classes: Vec<usize>,
    true_classes: Vec<usize>,
    pred_values: Vec<f64>,
    true_values: Vec<f64>,
}

impl Scorer {
    fn new(task: TaskKind) -> Self {
        Scorer {
            task,
            loss_sum: 0.0,
            items: 0,
            pred_classes: Vec::new(),
            true_classes: Vec::new(),
            pred_values: Vec::new(),
            true_values: Vec::new(),
        }
    }

    fn add(&mut self, loss: f64, output: &crate::tensor::Tensor, targets: &Targets) {
        let n = targets.len();
        self.loss_sum += loss * n as f64;
        self.items += n;
        match targets {
            Targets::Classes(y) => {
                let pred = match self.task {
                    TaskKind::EdgePred => output
                        .data()
                        .iter()
                        .map(|&z| usize::from(z > 0.0))
                        .collect(),
                    _ => argmax_rows(output),
                };
                self.pred_classes.extend(pred);
                self.true_classes.extend_from_slice(y);
            }
            Targets::Values(y) => {
                self.pred_values.extend_from_slice(output.data());
                self.true_values.extend_from_slice(y);
            }
        }
    }

    fn finish(&self) -> EvalResult {
        let metric = MetricKind::for_task(self.task);
        let value = match metric {
            MetricKind::Accuracy => accuracy(&self.pred_classes, &self.true_classes),
            MetricKind::WeightedAccuracy => {
                weighted_accuracy(&self.pred_classes, &self.true_classes)
            }
            MetricKind::F1Positive => f1_positive(&self.pred_classes, &self.true_classes),
            MetricKind::Mae => mae(&self.pred_values, &self.true_values),
        };
        EvalResult {
            loss: if self.items == 0 {
                0.0
            } else {
                self.loss_sum / self.items as f64
            },
            metric,
            value,
            items: self.items,
        }
    }
}

/// Loss and task metric over one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Item-weighted mean of the per-batch losses.
    pub loss: f64,
    pub metric: MetricKind,
    pub value: f64,
    /// Number of scored nodes, edges or graphs.
    pub items: usize,
}

/// Evaluation-mode loss and metric over `graphs`, batched in storage order.
pub fn evaluate(
    model: &Model,
    graphs: &[Graph],
    batch_size: usize,
    spec: &LossSpec,
) -> Result<EvalResult, TrainError> {
    let mut scorer = Scorer::new(model.dims.task);
    for chunk in graphs.chunks(batch_size.max(1)) {
        let batch = model.prepare(chunk)?;
        let targets = Targets::of(&batch, model.dims.task)?;
        let mut tape = Tape::new();
        let params = model.params.map(&mut |_, t| tape.constant(t.clone()));
        let out = model.forward_with(&mut tape, &batch, &params, Mode::Eval)?;
        let loss =
            task_loss(&mut tape, out.output, &targets, spec).map_err(ModelError::at("loss"))?;
        scorer.add(tape.value(loss).data()[0], tape.value(out.output), &targets);
    }
    Ok(scorer.finish())
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    LrFloor,
    MaxEpochs,
    TargetLoss,
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    pub history: Vec<MetricsRecord>,
    /// Epoch (1-based) whose validation loss was lowest.
    pub best_epoch: usize,
    /// Parameters and statistics as of `best_epoch`.
    pub best_model: Model,
    /// The model after the last epoch.
    pub final_model: Model,
    pub test: EvalResult,
    pub epochs_run: usize,
    pub final_lr: f64,
    pub stop_reason: StopReason,
    pub final_train_loss: f64,
}

/// Trains one model from `seed` and evaluates its best-validation state on
/// the test split.
///
/// Each epoch shuffles the training graphs, takes one Adam step per batch,
/// then scores the validation split in evaluation mode. The validation loss
/// drives the plateau scheduler and the best-model selection; when the
/// validation split is empty the epoch's training loss is used instead.
pub fn train_loop(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let dims = ModelDims::from_dataset(dataset);
    let mut init_rng = Rng::new(sub_seed(seed, streams::INIT));
    let model = Model::new(model_config.clone(), dims, &mut init_rng)?;
    train_model(model, dataset, config, seed)
}

/// Like [`train_loop`] but starting from an existing model.
pub fn train_model(
    mut model: Model,
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let task = model.dims.task;
    let spec = LossSpec::from_training_split(&dataset.train, &model.dims, config.balance_classes);
    let mut batch_rng = Rng::new(sub_seed(seed, streams::BATCHING));
    let mut adam = Adam::new(config.lr);
    let mut sched =
        PlateauScheduler::new(config.lr, config.lr_factor, config.patience, config.min_lr);
    let start = Instant::now();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epochs_run = 0;
    let mut final_train_loss = f64::NAN;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        let order = batch_rng.permutation(dataset.train.len());
        let mut scorer = Scorer::new(task);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let graphs: Vec<Graph> = idx.iter().map(|&i| dataset.train[i].clone()).collect();
            let batch = model.prepare(&graphs)?;
            let targets = Targets::of(&batch, task)?;
            let numerical = |source: ModelError| TrainError::NonFinite {
                epoch,
                batch: b,
                source,
            };
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch, Mode::Train).map_err(|e| {
                if e.is_numerical() {
                    numerical(e)
                } else {
                    e.into()
                }
            })?;
            let loss = task_loss(&mut tape, out.output, &targets, &spec)
                .map_err(|e| numerical(ModelError::at("loss")(e)))?;
            tape.backward(loss)
                .map_err(|e| numerical(ModelError::at("backward")(e)))?;
            let mut grads = Vec::new();
            out.params
                .map(&mut |_, v| grads.push(tape.grad_or_zeros(*v)));
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(numerical(ModelError::Tensor {
                    stage: "gradient",
                    source: TensorError::NonFinite { op: "backward" },
                }));
            }
            scorer.add(tape.value(loss).data()[0], tape.value(out.output), &targets);
            adam.step_model(&mut model.params, &grads);
            model.apply_bn_stats(&out.bn_stats);
        }
        let train = scorer.finish();
        final_train_loss = train.loss;
        history.push(MetricsRecord::new(epoch, "train", &train, start));

        let select_loss = if dataset.val.is_empty() {
            train.loss
        } else {
            let val = evaluate(&model, &dataset.val, config.batch_size, &spec)?;
            history.push(MetricsRecord::new(epoch, "val", &val, start));
            val.loss
        };
        if best.as_ref().is_none_or(|(l, _, _)| select_loss < *l) {
            best = Some((select_loss, epoch, model.clone()));
        }

        if config.target_train_loss.is_some_and(|t| train.loss < t) {
            stop_reason = StopReason::TargetLoss;
            break;
        }
        match sched.step(select_loss) {
            ScheduleEvent::Stop => {
                stop_reason = StopReason::LrFloor;
                break;
            }
            ScheduleEvent::Reduced => adam.lr = sched.lr,
            ScheduleEvent::Improved | ScheduleEvent::Waiting => {}
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch runs");
    let test = evaluate(&best_model, &dataset.test, config.batch_size, &spec)?;
    history.push(MetricsRecord::new(best_epoch, "test", &test, start));
    Ok(TrainOutcome {
        seed,
        history,
        best_epoch,
        best_model,
        final_model: model,
        test,
        epochs_run,
        final_lr: sched.lr,
        stop_reason,
        final_train_loss,
    })
}

/// Runs [`train_loop`] once per seed, in order.
pub fn run_seeds(
    dataset: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<TrainOutcome>, TrainError> {
    seeds
        .iter()
        .map(|&s| train_loop(dataset, model_config, config, s))
        .collect()
}
