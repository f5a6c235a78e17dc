//! Graph neural networks whose layers add a neighbour-level message
//! interaction (NLMI) encoding to GCN and GatedGCN message passing.
//!
//! `tensor` holds the f64 tensors and the reverse-mode tape, `graph` the
//! graph types, batching and synthetic generators, `layers` the layers and
//! the full model, `training` losses, Adam, metrics and the training loop,
//! and `verification` the reference oracles and property harnesses.

// Parameter checks are written `!(x >= 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod graph;
pub mod layers;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod verification;

pub use graph::{Graph, GraphBatch, Topology};
pub use layers::{BaseKind, Model, ModelConfig, ModelDims, Terms};
pub use rng::Rng;
pub use tensor::{Tape, Tensor, TensorError, Var};
