//! Shared fixtures for the benchmarks.

use nlmi_core::graph::{Graph, TaskKind};
use nlmi_core::layers::{BaseKind, Model, ModelConfig, ModelDims};
use nlmi_core::verification::random_graph;
use nlmi_core::Rng;

/// `count` random graphs of `nodes` nodes with edge probability `p`, three
/// node features and one edge feature each.
pub fn graphs(count: usize, nodes: usize, p: f64, seed: u64) -> Vec<Graph> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| random_graph(nodes, p, 3, Some(1), &mut rng))
        .collect()
}

/// A node-classification model over the [`graphs`] fixture.
pub fn model(base: BaseKind, nlmi: bool, layers: usize, hidden: usize) -> Model {
    let dims = ModelDims {
        task: TaskKind::NodeClass,
        node_in: 3,
        edge_in: Some(1),
        out: 2,
    };
    Model::new(
        ModelConfig::new(base, nlmi, layers, hidden),
        dims,
        &mut Rng::new(0),
    )
    .expect("valid config")
}
