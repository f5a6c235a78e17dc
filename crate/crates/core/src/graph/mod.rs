//! Graphs, mini-batches, synthetic task generators and the dataset file format.
//!
//! Edges are directed `(src, dst)` pairs and messages flow from `src` into
//! `dst`, so the neighbourhood of `u` is read off its incoming edges.
//! Undirected graphs store both directions.

mod batch;
mod dataset;
pub mod generators;

pub use batch::GraphBatch;
pub use dataset::{
    Dataset, DatasetError, DatasetSpec, GeneratorParams, Split, TaskKind, DATASET_FORMAT_VERSION,
};

use std::rc::Rc;

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge {index} = ({src}, {dst}) is out of range for {num_nodes} nodes")]
    EdgeOutOfRange {
        index: usize,
        src: usize,
        dst: usize,
        num_nodes: usize,
    },
    #[error("node features have {rows} rows for {num_nodes} nodes")]
    NodeFeatureRows { rows: usize, num_nodes: usize },
    #[error("edge features have {rows} rows for {num_edges} edges")]
    EdgeFeatureRows { rows: usize, num_edges: usize },
    #[error("labels do not match the graph: {0}")]
    Labels(String),
    #[error("invalid generator parameter: {0}")]
    Parameter(String),
    #[error("optimal tour uses edge ({0}, {1}) which is not in the k-NN graph")]
    TourEdgeMissing(usize, usize),
    #[error("cannot batch graphs with differing {0} widths")]
    MixedWidths(&'static str),
}

/// Prediction targets carried by a graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    None,
    /// One class id per node.
    Node(Vec<usize>),
    /// One class id for the whole graph.
    GraphClass(usize),
    /// One real target for the whole graph.
    GraphValue(f64),
    /// One binary label per edge, aligned with `Graph::edges`.
    Edge(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// `num_nodes x d_in`.
    pub node_features: Tensor,
    /// `num_edges x d_e`, when the task provides edge features.
    pub edge_features: Option<Tensor>,
    pub labels: Labels,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        node_features: Tensor,
        edge_features: Option<Tensor>,
        labels: Labels,
    ) -> Result<Self, GraphError> {
        let g = Graph {
            num_nodes,
            edges,
            node_features,
            edge_features,
            labels,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        for (index, &(src, dst)) in self.edges.iter().enumerate() {
            if src >= self.num_nodes || dst >= self.num_nodes {
                return Err(GraphError::EdgeOutOfRange {
                    index,
                    src,
                    dst,
                    num_nodes: self.num_nodes,
                });
            }
        }
        if self.node_features.rank() != 2 || self.node_features.rows() != self.num_nodes {
            return Err(GraphError::NodeFeatureRows {
                rows: self.node_features.rows(),
                num_nodes: self.num_nodes,
            });
        }
        if let Some(e) = &self.edge_features {
            if e.rank() != 2 || e.rows() != self.edges.len() {
                return Err(GraphError::EdgeFeatureRows {
                    rows: e.rows(),
                    num_edges: self.edges.len(),
                });
            }
        }
        match &self.labels {
            Labels::Node(y) if y.len() != self.num_nodes => Err(GraphError::Labels(format!(
                "{} node labels for {} nodes",
                y.len(),
                self.num_nodes
            ))),
            Labels::Edge(y) if y.len() != self.edges.len() => Err(GraphError::Labels(format!(
                "{} edge labels for {} edges",
                y.len(),
                self.edges.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_feature_dim(&self) -> Option<usize> {
        self.edge_features.as_ref().map(|e| e.cols())
    }

    /// `|N(u)|` for every node (count of incoming edges).
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(_, d) in &self.edges {
            deg[d] += 1;
        }
        deg
    }

    /// Sources of the incoming edges of `u`, in edge storage order.
    pub fn neighbours(&self, u: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, d)| d == u)
            .map(|&(s, _)| s)
            .collect()
    }

    pub fn has_self_loops(&self) -> bool {
        self.edges.iter().any(|&(s, d)| s == d)
    }

    /// Adds a `(u, u)` edge to every node that lacks one. New edges get zero
    /// edge features and, for edge-labelled graphs, label 0.
    pub fn with_self_loops(&self) -> Graph {
        let mut g = self.clone();
        let mut has = vec![false; self.num_nodes];
        for &(s, d) in &self.edges {
            if s == d {
                has[s] = true;
            }
        }
        let added: Vec<usize> = (0..self.num_nodes).filter(|&u| !has[u]).collect();
        g.edges.extend(added.iter().map(|&u| (u, u)));
        if let Some(e) = &self.edge_features {
            let mut data = e.data().to_vec();
            data.extend(std::iter::repeat_n(0.0, added.len() * e.cols()));
            g.edge_features =
                Some(Tensor::new(vec![g.edges.len(), e.cols()], data).expect("shape"));
        }
        if let Labels::Edge(y) = &mut g.labels {
            y.extend(std::iter::repeat_n(0, added.len()));
        }
        g
    }

    /// Relabels node `u` as `perm[u]`. Edges keep their storage position.
    pub fn permute_nodes(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.num_nodes, "permutation length");
        let mut inverse = vec![0; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            inverse[new] = old;
        }
        let node_features = self.node_features.select_rows(&inverse);
        let edges = self
            .edges
            .iter()
            .map(|&(s, d)| (perm[s], perm[d]))
            .collect();
        let labels = match &self.labels {
            Labels::Node(y) => Labels::Node(inverse.iter().map(|&o| y[o]).collect()),
            other => other.clone(),
        };
        Graph {
            num_nodes: self.num_nodes,
            edges,
            node_features,
            edge_features: self.edge_features.clone(),
            labels,
        }
    }

    /// Reorders edge storage: new edge `i` is old edge `order[i]`.
    pub fn reorder_edges(&self, order: &[usize]) -> Graph {
        assert_eq!(order.len(), self.edges.len(), "edge order length");
        let labels = match &self.labels {
            Labels::Edge(y) => Labels::Edge(order.iter().map(|&i| y[i]).collect()),
            other => other.clone(),
        };
        Graph {
            num_nodes: self.num_nodes,
            edges: order.iter().map(|&i| self.edges[i]).collect(),
            node_features: self.node_features.clone(),
            edge_features: self.edge_features.as_ref().map(|e| e.select_rows(order)),
            labels,
        }
    }

    pub fn shuffle_edges(&self, rng: &mut Rng) -> (Graph, Vec<usize>) {
        let order = rng.permutation(self.edges.len());
        (self.reorder_edges(&order), order)
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.num_nodes, &self.edges)
    }
}

/// Index arrays the layers need, computed once per forward pass.
#[derive(Debug, Clone)]
pub struct Topology {
    pub num_nodes: usize,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    /// Edge indices sorted by `(dst, src, storage index)`. Every per-node sum
    /// accumulates in this order.
    pub order: Rc<[usize]>,
    pub in_degree: Vec<usize>,
}

impl Topology {
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&i| (dst[i], src[i], i));
        let mut in_degree = vec![0; num_nodes];
        for &d in &dst {
            in_degree[d] += 1;
        }
        Topology {
            num_nodes,
            src: src.into(),
            dst: dst.into(),
            order: order.into(),
            in_degree,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

/// Every undirected pair `{a, b}` as the two directed edges `(a, b)` and `(b, a)`.
pub fn both_directions(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(pairs.len() * 2);
    for &(a, b) in pairs {
        edges.push((a, b));
        edges.push((b, a));
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::new(
            3,
            both_directions(&[(0, 1), (1, 2)]),
            Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], 1).unwrap(),
            None,
            Labels::Node(vec![0, 1, 0]),
        )
        .unwrap()
    }

    #[test]
    fn neighbourhood_reads_incoming_edges() {
        let g = path3();
        assert_eq!(g.neighbours(1), vec![0, 2]);
        assert_eq!(g.in_degrees(), vec![1, 2, 1]);
        assert!(!g.has_self_loops());
    }

    #[test]
    fn out_of_range_edge_rejected() {
        let err = Graph::new(2, vec![(0, 2)], Tensor::zeros(&[2, 1]), None, Labels::None);
        assert!(matches!(err, Err(GraphError::EdgeOutOfRange { .. })));
    }

    #[test]
    fn self_loop_transform() {
        let g = path3().with_self_loops();
        assert!(g.has_self_loops());
        assert_eq!(g.num_edges(), 7);
        assert_eq!(g.with_self_loops().num_edges(), 7);
    }

    #[test]
    fn permutation_moves_features_and_labels() {
        let g = path3();
        let p = g.permute_nodes(&[2, 0, 1]);
        // old node 0 is now node 2
        assert_eq!(p.node_features.row(2), &[0.0]);
        assert_eq!(p.labels, Labels::Node(vec![1, 0, 0]));
        assert_eq!(p.neighbours(0), vec![2, 1]);
    }

    #[test]
    fn canonical_order_ignores_storage() {
        let g = path3();
        let t = g.topology();
        let sorted: Vec<(usize, usize)> = t.order.iter().map(|&i| g.edges[i]).collect();
        assert_eq!(sorted, vec![(1, 0), (0, 1), (2, 1), (1, 2)]);
    }
}
