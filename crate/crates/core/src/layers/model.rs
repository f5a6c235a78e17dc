use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    gatedgcn_layer_forward, gcn_layer_forward, linear, mlp, BatchNormParams, BnBatchStats,
    BnRunning, GatedGcnLayerParams, GcnLayerParams, LayerOptions, LayerParams, Linear, Mlp, Mode,
    ModelError, ModelParams, Terms, GATE_EPS,
};
use crate::graph::{Dataset, Graph, GraphBatch, Labels, TaskKind, Topology};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Gcn,
    GatedGcn,
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseKind::Gcn => "gcn",
            BaseKind::GatedGcn => "gatedgcn",
        })
    }
}

impl FromStr for BaseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" => Ok(BaseKind::Gcn),
            "gatedgcn" => Ok(BaseKind::GatedGcn),
            other => Err(format!("unknown base `{other}` (expected gcn or gatedgcn)")),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_gate_eps() -> f64 {
    GATE_EPS
}

fn default_bn_momentum() -> f64 {
    0.1
}

/// Architecture of a model: base convolution, NLMI switch, depth and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub base: BaseKind,
    pub nlmi: bool,
    /// Number of message-passing layers `K`.
    pub layers: usize,
    /// Hidden width `d`.
    pub hidden: usize,
    #[serde(default)]
    pub terms: Terms,
    #[serde(default = "default_true")]
    pub residual: bool,
    #[serde(default = "default_gate_eps")]
    pub gate_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    /// Add a `(u, u)` edge to every node before message passing.
    #[serde(default)]
    pub self_loops: bool,
}

impl ModelConfig {
    pub fn new(base: BaseKind, nlmi: bool, layers: usize, hidden: usize) -> Self {
        ModelConfig {
            base,
            nlmi,
            layers,
            hidden,
            terms: Terms::ALL,
            residual: true,
            gate_eps: GATE_EPS,
            bn_momentum: default_bn_momentum(),
            self_loops: false,
        }
    }

    /// The terms that actually enter each node update. The encoding term
    /// only exists in NLMI layers.
    pub fn effective_terms(&self) -> Terms {
        Terms {
            encoding: self.terms.encoding && self.nlmi,
            ..self.terms
        }
    }

    pub fn layer_options(&self) -> LayerOptions {
        LayerOptions {
            terms: self.effective_terms(),
            residual: self.residual,
            gate_eps: self.gate_eps,
        }
    }

    /// Short variant label such as `nlmi-gatedgcn`.
    pub fn variant_name(&self) -> String {
        if self.nlmi {
            format!("nlmi-{}", self.base)
        } else {
            self.base.to_string()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let t = self.effective_terms();
        if !(t.self_term || t.message || t.encoding) {
            return Err(ModelError::Config(format!(
                "terms `{}` leave no active update term for {}",
                self.terms,
                self.variant_name()
            )));
        }
        if self.hidden == 0 {
            return Err(ModelError::Config("hidden width must be positive".into()));
        }
        if !(self.gate_eps > 0.0) {
            return Err(ModelError::Config(format!(
                "gate_eps must be positive, got {}",
                self.gate_eps
            )));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(ModelError::Config(format!(
                "bn_momentum must lie in [0, 1], got {}",
                self.bn_momentum
            )));
        }
        Ok(())
    }
}

/// Data-dependent widths of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub task: TaskKind,
    pub node_in: usize,
    pub edge_in: Option<usize>,
    /// Number of classes, or 1 for regression and edge scoring.
    pub out: usize,
}

impl ModelDims {
    pub fn from_dataset(dataset: &Dataset) -> ModelDims {
        let graphs: Vec<&Graph> = dataset
            .train
            .iter()
            .chain(&dataset.val)
            .chain(&dataset.test)
            .collect();
        let first = graphs.first().copied();
        let node_in = first.map_or(0, |g| g.node_feature_dim());
        let edge_in = first.and_then(|g| g.edge_feature_dim());
        let task = dataset.spec.task;
        let out = match task {
            TaskKind::NodeClass | TaskKind::GraphClass => {
                let max = graphs
                    .iter()
                    .flat_map(|g| match &g.labels {
                        Labels::Node(y) => y.clone(),
                        Labels::GraphClass(c) => vec![*c],
                        _ => Vec::new(),
                    })
                    .max()
                    .unwrap_or(0);
                (max + 1).max(2)
            }
            TaskKind::EdgePred | TaskKind::GraphReg => 1,
        };
        ModelDims {
            task,
            node_in,
            edge_in,
            out,
        }
    }
}

/// Final node (and, for GatedGCN, edge) embeddings after `K` layers.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings {
    pub h: Var,
    pub e: Option<Var>,
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// The parameter tree as bound on the tape, for reading gradients.
    pub params: ModelParams<Var>,
    pub embeddings: Embeddings,
    /// Task predictions: `[N, C]` node logits, `[G, C]` graph logits,
    /// `[E, 1]` edge logits or `[G, 1]` regression values.
    pub output: Var,
    /// Per-layer batch statistics (training mode, GatedGCN layers only).
    pub bn_stats: Vec<Option<BnBatchStats>>,
}

/// Input encoders followed by `K` message-passing layers (no readout).
#[allow(clippy::too_many_arguments)]
pub fn stack_forward(
    tape: &mut Tape,
    batch: &GraphBatch,
    topo: &Topology,
    config: &ModelConfig,
    params: &ModelParams<Var>,
    bn: &[BnRunning],
    mode: Mode,
) -> Result<(Embeddings, Vec<Option<BnBatchStats>>), ModelError> {
    let x = tape.constant(batch.node_features.clone());
    let mut h = linear(tape, x, &params.input).map_err(ModelError::at("input encoder"))?;
    let mut e = match (config.base, &params.edge_input, &batch.edge_features) {
        (BaseKind::Gcn, _, _) => None,
        (BaseKind::GatedGcn, Some(enc), Some(ef)) => {
            let ef = tape.constant(ef.clone());
            Some(linear(tape, ef, enc).map_err(ModelError::at("edge encoder"))?)
        }
        (BaseKind::GatedGcn, _, _) => {
            Some(tape.constant(Tensor::zeros(&[topo.num_edges(), config.hidden])))
        }
    };
    let opts = config.layer_options();
    let mut stats = Vec::with_capacity(params.layers.len());
    for (k, layer) in params.layers.iter().enumerate() {
        match layer {
            LayerParams::Gcn(p) => {
                h = gcn_layer_forward(tape, h, topo, p, &opts).map_err(ModelError::at_layer(k))?;
                stats.push(None);
            }
            LayerParams::GatedGcn(p) => {
                let e_in = e.expect("GatedGCN layers carry edge embeddings");
                let (h2, e2, s) =
                    gatedgcn_layer_forward(tape, h, e_in, topo, p, &bn[k], mode, &opts)
                        .map_err(ModelError::at_layer(k))?;
                h = h2;
                e = Some(e2);
                stats.push(s);
            }
        }
    }
    Ok((Embeddings { h, e }, stats))
}

/// Task head on top of the final embeddings.
///
/// Node classification scores every node. Graph tasks mean-pool each
/// graph's nodes first. Edge prediction scores `[h_src | h_dst]` for every
/// stored edge, so `(v, u)` and `(u, v)` can receive different scores.
pub fn readout(
    tape: &mut Tape,
    emb: &Embeddings,
    head: &Mlp<Var>,
    task: TaskKind,
    batch: &GraphBatch,
    topo: &Topology,
) -> Result<Var, ModelError> {
    let input = match task {
        TaskKind::NodeClass => emb.h,
        TaskKind::GraphClass | TaskKind::GraphReg => mean_pool(tape, emb.h, batch)?,
        TaskKind::EdgePred => {
            let hs = tape
                .gather(emb.h, topo.src.clone())
                .map_err(ModelError::at("readout"))?;
            let hd = tape
                .gather(emb.h, topo.dst.clone())
                .map_err(ModelError::at("readout"))?;
            tape.concat_cols(hs, hd)
                .map_err(ModelError::at("readout"))?
        }
    };
    mlp(tape, input, head).map_err(ModelError::at("readout"))
}

fn mean_pool(tape: &mut Tape, h: Var, batch: &GraphBatch) -> Result<Var, ModelError> {
    let g = batch.num_graphs();
    let ids: Rc<[usize]> = batch.graph_id.clone().into();
    // graph ids are non-decreasing along the node axis
    let order: Rc<[usize]> = (0..batch.num_nodes).collect();
    let sums = tape
        .segment_sum(h, ids, order, g)
        .map_err(ModelError::at("pooling"))?;
    let inv: Rc<[f64]> = batch
        .graph_sizes()
        .iter()
        .map(|&n| 1.0 / n.max(1) as f64)
        .collect();
    tape.scale_rows(sums, inv)
        .map_err(ModelError::at("pooling"))
}

/// A model: configuration, widths, parameter values and batch-norm state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub params: ModelParams<Tensor>,
    /// Running batch-norm statistics, one per GatedGCN layer, empty for GCN.
    pub bn: Vec<BnRunning>,
}

impl Model {
    pub fn new(config: ModelConfig, dims: ModelDims, rng: &mut Rng) -> Result<Model, ModelError> {
        config.validate()?;
        if config.self_loops && dims.task == TaskKind::EdgePred {
            return Err(ModelError::Config(
                "self loops would add unlabelled edges to an edge-prediction task".into(),
            ));
        }
        let d = config.hidden;
        let input = Linear::init(dims.node_in, d, rng);
        let edge_input = match (config.base, dims.edge_in) {
            (BaseKind::GatedGcn, Some(de)) => Some(Linear::init(de, d, rng)),
            _ => None,
        };
        let terms = config.effective_terms();
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let layer = match config.base {
                BaseKind::Gcn => {
                    let weight = super::uniform_init(&[d, d], d, rng);
                    let self_weight = terms
                        .self_term
                        .then(|| super::uniform_init(&[d, d], d, rng));
                    let fc = terms.encoding.then(|| Linear::init(2 * d, d, rng));
                    LayerParams::Gcn(GcnLayerParams {
                        weight,
                        self_weight,
                        fc,
                    })
                }
                BaseKind::GatedGcn => {
                    let a = super::uniform_init(&[d, d], d, rng);
                    let b = super::uniform_init(&[d, d], d, rng);
                    let c = super::uniform_init(&[d, d], d, rng);
                    let f = super::uniform_init(&[d, d], d, rng);
                    let fc = terms.encoding.then(|| Linear::init(2 * d, d, rng));
                    LayerParams::GatedGcn(GatedGcnLayerParams {
                        a,
                        b,
                        c,
                        f,
                        fc,
                        bn: BatchNormParams::new(d),
                    })
                }
            };
            layers.push(layer);
        }
        let head_in = match dims.task {
            TaskKind::EdgePred => 2 * d,
            _ => d,
        };
        let head = Mlp::init(&[head_in, d, dims.out], rng);
        let bn = match config.base {
            BaseKind::Gcn => Vec::new(),
            BaseKind::GatedGcn => (0..config.layers)
                .map(|_| BnRunning::new(d, config.bn_momentum))
                .collect(),
        };
        Ok(Model {
            config,
            dims,
            params: ModelParams {
                input,
                edge_input,
                layers,
                head,
            },
            bn,
        })
    }

    /// Batches graphs, applying the self-loop transform when configured.
    pub fn prepare(&self, graphs: &[Graph]) -> Result<GraphBatch, ModelError> {
        let batch = if self.config.self_loops {
            let looped: Vec<Graph> = graphs.iter().map(Graph::with_self_loops).collect();
            GraphBatch::new(&looped)
        } else {
            GraphBatch::new(graphs)
        };
        batch.map_err(|e| ModelError::Config(e.to_string()))
    }

    /// Full forward pass with the parameters bound as gradient-tracking leaves.
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        mode: Mode,
    ) -> Result<ForwardOutput, ModelError> {
        let params = self.params.bind(tape);
        self.forward_with(tape, batch, &params, mode)
    }

    /// Forward pass with caller-bound parameters.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        params: &ModelParams<Var>,
        mode: Mode,
    ) -> Result<ForwardOutput, ModelError> {
        self.check_batch(batch)?;
        let topo = batch.topology();
        let (embeddings, bn_stats) =
            stack_forward(tape, batch, &topo, &self.config, params, &self.bn, mode)?;
        let output = readout(
            tape,
            &embeddings,
            &params.head,
            self.dims.task,
            batch,
            &topo,
        )?;
        Ok(ForwardOutput {
            params: params.clone(),
            embeddings,
            output,
            bn_stats,
        })
    }

    /// Evaluation-mode predictions on a batch.
    pub fn predict(&self, batch: &GraphBatch) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let params = self.params.map(&mut |_, t| tape.constant(t.clone()));
        let out = self.forward_with(&mut tape, batch, &params, Mode::Eval)?;
        Ok(tape.value(out.output).clone())
    }

    /// Folds training-mode batch statistics into the running statistics.
    pub fn apply_bn_stats(&mut self, stats: &[Option<BnBatchStats>]) {
        for (running, s) in self.bn.iter_mut().zip(stats) {
            if let Some(s) = s {
                running.update(s);
            }
        }
    }

    fn check_batch(&self, batch: &GraphBatch) -> Result<(), ModelError> {
        if batch.node_features.cols() != self.dims.node_in {
            return Err(ModelError::Config(format!(
                "node features are {} wide, model expects {}",
                batch.node_features.cols(),
                self.dims.node_in
            )));
        }
        let edge_in = batch.edge_features.as_ref().map(|e| e.cols());
        if self.config.base == BaseKind::GatedGcn && edge_in != self.dims.edge_in {
            return Err(ModelError::Config(format!(
                "edge features are {edge_in:?} wide, model expects {:?}",
                self.dims.edge_in
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut params = BTreeMap::new();
        self.params.map(&mut |name, t| {
            params.insert(name.to_string(), t.clone());
        });
        let bn = self
            .bn
            .iter()
            .enumerate()
            .map(|(k, r)| (format!("layers.{k}.bn"), r.clone()))
            .collect();
        Checkpoint {
            version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            dims: self.dims,
            params,
            bn,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Model, ModelError> {
        if ck.version != CHECKPOINT_FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.version
            )));
        }
        // build the parameter skeleton, then overwrite every leaf
        let mut model = Model::new(ck.config, ck.dims, &mut Rng::new(0))?;
        let mut params = ck.params;
        let mut problem = None;
        model.params.for_each_mut(&mut |name, t| {
            match params.remove(name) {
                Some(v) if v.shape() == t.shape() => *t = v,
                Some(v) => {
                    problem.get_or_insert(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        v.shape(),
                        t.shape()
                    ));
                }
                None => {
                    problem.get_or_insert(format!("missing parameter `{name}`"));
                }
            };
        });
        if let Some(p) = problem {
            return Err(ModelError::Checkpoint(p));
        }
        if let Some(extra) = params.keys().next() {
            return Err(ModelError::Checkpoint(format!(
                "unexpected parameter `{extra}`"
            )));
        }
        let mut bn = ck.bn;
        for (k, running) in model.bn.iter_mut().enumerate() {
            let key = format!("layers.{k}.bn");
            match bn.remove(&key) {
                Some(r)
                    if r.mean.shape() == running.mean.shape()
                        && r.var.shape() == running.var.shape() =>
                {
                    *running = r
                }
                Some(_) => {
                    return Err(ModelError::Checkpoint(format!(
                        "`{key}` has the wrong width"
                    )))
                }
                None => {
                    return Err(ModelError::Checkpoint(format!(
                        "missing statistics `{key}`"
                    )))
                }
            }
        }
        if let Some(extra) = bn.keys().next() {
            return Err(ModelError::Checkpoint(format!(
                "unexpected statistics `{extra}`"
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Model::from_checkpoint(ck)
    }
}

/// On-disk form of a [`Model`]. Parameters are keyed by their dotted names
/// (`layers.2.fc.weight`) and stored as `{shape, data}` with flat data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub params: BTreeMap<String, Tensor>,
    pub bn: BTreeMap<String, BnRunning>,
}
