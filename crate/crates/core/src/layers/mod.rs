//! Message-passing layers with optional neighbour-level message interaction
//! (NLMI) encoding, plus the auxiliary pieces a full model needs.
//!
//! Node embeddings are row matrices `[N, d]`; a weight `W: [d, d]` acts as
//! `H W`. For an edge `v -> u` (`src = v`, `dst = u`) the message
//! `m_{v->u}` is one row of a per-edge `[E, d]` tensor, and per-node sums
//! `m_{N(u)}` are segment sums over destination, accumulated in the
//! canonical `(dst, src)` edge order of [`Topology`](crate::graph::Topology).
//!
//! The NLMI encoder turns each message and the sum of the *other* messages
//! into one affine code, `fc([m_{v->u} | m_{N(u)} - m_{v->u}])`, and sums the
//! codes per node. Computing the rest-sum by subtraction keeps the cost linear
//! in the number of edges.

mod gated;
mod gcn;
mod model;
mod params;

pub use gated::{gated_messages, gatedgcn_layer_forward, GatedMessages};
pub use gcn::{gcn_layer_forward, gcn_messages};
pub use model::{
    readout, stack_forward, BaseKind, Checkpoint, Embeddings, ForwardOutput, Model, ModelConfig,
    ModelDims, CHECKPOINT_FORMAT_VERSION,
};
pub use params::{
    uniform_init, BatchNormParams, GatedGcnLayerParams, GcnLayerParams, LayerParams, Linear, Mlp,
    ModelParams,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Topology;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Default gate normalisation constant.
pub const GATE_EPS: f64 = 1e-6;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer {layer}: {source}")]
    Layer { layer: usize, source: TensorError },
    #[error("{stage}: {source}")]
    Tensor {
        stage: &'static str,
        source: TensorError,
    },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl ModelError {
    pub fn at_layer(layer: usize) -> impl FnOnce(TensorError) -> ModelError {
        move |source| ModelError::Layer { layer, source }
    }

    pub fn at(stage: &'static str) -> impl FnOnce(TensorError) -> ModelError {
        move |source| ModelError::Tensor { stage, source }
    }

    /// True when the failure is a NaN/Inf rather than a configuration problem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ModelError::Layer {
                source: TensorError::NonFinite { .. },
                ..
            } | ModelError::Tensor {
                source: TensorError::NonFinite { .. },
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which terms enter the pre-activation of a node update:
/// the self term `A h_u`, the aggregated message `m_{N(u)}` and the
/// aggregated encoding `enc_{N(u)}`.
///
/// Written as a comma-separated subset of `self,msg,enc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Terms {
    pub self_term: bool,
    pub message: bool,
    pub encoding: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        self_term: true,
        message: true,
        encoding: true,
    };

    /// The four rows of the term ablation, in table order.
    pub const ABLATION_ROWS: [Terms; 4] = [
        Terms {
            self_term: true,
            message: true,
            encoding: false,
        },
        Terms {
            self_term: true,
            message: false,
            encoding: true,
        },
        Terms {
            self_term: false,
            message: true,
            encoding: true,
        },
        Terms::ALL,
    ];
}

impl Default for Terms {
    fn default() -> Self {
        Terms::ALL
    }
}

impl fmt::Display for Terms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.self_term {
            parts.push("self");
        }
        if self.message {
            parts.push("msg");
        }
        if self.encoding {
            parts.push("enc");
        }
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Terms {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut t = Terms {
            self_term: false,
            message: false,
            encoding: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "self" => t.self_term = true,
                "msg" => t.message = true,
                "enc" => t.encoding = true,
                other => return Err(format!("unknown term `{other}` (expected self, msg, enc)")),
            }
        }
        if !(t.self_term || t.message || t.encoding) {
            return Err("at least one of self, msg, enc is required".into());
        }
        Ok(t)
    }
}

impl TryFrom<String> for Terms {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Terms> for String {
    fn from(t: Terms) -> String {
        t.to_string()
    }
}

/// Per-layer switches resolved from the model configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerOptions {
    pub terms: Terms,
    pub residual: bool,
    pub gate_eps: f64,
}

impl Default for LayerOptions {
    fn default() -> Self {
        LayerOptions {
            terms: Terms::ALL,
            residual: true,
            gate_eps: GATE_EPS,
        }
    }
}

/// Running statistics of a batch-norm layer (not trainable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnRunning {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
}

impl BnRunning {
    pub fn new(width: usize, momentum: f64) -> Self {
        BnRunning {
            mean: Tensor::zeros(&[width]),
            var: Tensor::full(&[width], 1.0),
            momentum,
        }
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, stats: &BnBatchStats) {
        let m = self.momentum;
        for (r, &b) in self.mean.data_mut().iter_mut().zip(stats.mean.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(stats.var.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Batch mean and (biased) variance observed in a training-mode forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Tensor,
    pub var: Tensor,
}

/// `x W + b`.
pub fn linear(tape: &mut Tape, x: Var, p: &Linear<Var>) -> Result<Var, TensorError> {
    let y = tape.matmul(x, p.weight)?;
    tape.add(y, p.bias)
}

pub fn mlp(tape: &mut Tape, x: Var, p: &Mlp<Var>) -> Result<Var, TensorError> {
    let mut h = x;
    for (i, l) in p.layers.iter().enumerate() {
        h = linear(tape, h, l)?;
        if i + 1 < p.layers.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Batch normalisation over the node axis.
///
/// Training mode normalises with the batch mean and biased variance and
/// returns them so the caller can fold them into the running statistics.
/// Evaluation mode uses only the running statistics.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    p: &BatchNormParams<Var>,
    running: &BnRunning,
    mode: Mode,
) -> Result<(Var, Option<BnBatchStats>), TensorError> {
    let (centered, inv_std, stats) = match mode {
        Mode::Train => {
            let n = tape.value(x).rows().max(1) as f64;
            let sum = tape.sum_rows(x)?;
            let mean = tape.scale(sum, 1.0 / n)?;
            let centered = tape.sub(x, mean)?;
            let sq = tape.mul(centered, centered)?;
            let sq_sum = tape.sum_rows(sq)?;
            let var = tape.scale(sq_sum, 1.0 / n)?;
            let shifted = tape.add_scalar(var, BN_EPS)?;
            let inv_std = tape.powf(shifted, -0.5)?;
            let stats = BnBatchStats {
                mean: tape.value(mean).clone(),
                var: tape.value(var).clone(),
            };
            (centered, inv_std, Some(stats))
        }
        Mode::Eval => {
            let mean = tape.constant(running.mean.clone());
            let inv = running.var.map(|v| 1.0 / (v + BN_EPS).sqrt());
            let inv_std = tape.constant(inv);
            (tape.sub(x, mean)?, inv_std, None)
        }
    };
    let normed = tape.mul(centered, inv_std)?;
    let scaled = tape.mul(normed, p.gamma)?;
    Ok((tape.add(scaled, p.beta)?, stats))
}

/// Per-edge interaction codes summed per destination node:
/// `enc_{N(u)} = sum_{v in N(u)} fc([m_{v->u} | m_{N(u)} - m_{v->u}])`.
///
/// `messages` is `[E, d]`, `totals` is `[N, d]`. Nodes without incoming
/// edges get a zero row.
pub fn nlmi_encode(
    tape: &mut Tape,
    messages: Var,
    totals: Var,
    topo: &Topology,
    fc: &Linear<Var>,
) -> Result<Var, TensorError> {
    let d = tape.value(messages).cols();
    let fc_in = tape.value(fc.weight).shape()[0];
    if fc_in != 2 * d {
        return Err(TensorError::Shape {
            op: "nlmi_encode",
            lhs: vec![topo.num_edges(), 2 * d],
            rhs: tape.value(fc.weight).shape().to_vec(),
        });
    }
    let totals_at_dst = tape.gather(totals, topo.dst.clone())?;
    let rest = tape.sub(totals_at_dst, messages)?;
    let joined = tape.concat_cols(messages, rest)?;
    let codes = linear(tape, joined, fc)?;
    tape.segment_sum(codes, topo.dst.clone(), topo.order.clone(), topo.num_nodes)
}

/// Sums the active update terms in the fixed order self, msg, enc.
pub(crate) fn combine_terms(tape: &mut Tape, terms: [Option<Var>; 3]) -> Result<Var, TensorError> {
    let mut acc: Option<Var> = None;
    for t in terms.into_iter().flatten() {
        acc = Some(match acc {
            None => t,
            Some(a) => tape.add(a, t)?,
        });
    }
    Ok(acc.expect("at least one update term is active"))
}
