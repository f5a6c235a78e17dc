use super::{Graph, GraphError, Labels, Topology};
use crate::tensor::Tensor;

/// Block-diagonal union of several graphs.
///
/// Node `i` of graph `g` becomes node `node_offsets[g] + i`; edges are
/// shifted the same way, so no edge crosses a graph boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub node_features: Tensor,
    pub edge_features: Option<Tensor>,
    /// `node_offsets[g]..node_offsets[g + 1]` are the nodes of graph `g`.
    pub node_offsets: Vec<usize>,
    /// Same layout for edges.
    pub edge_offsets: Vec<usize>,
    pub graph_id: Vec<usize>,
    pub labels: Vec<Labels>,
}

impl GraphBatch {
    pub fn new(graphs: &[Graph]) -> Result<Self, GraphError> {
        let node_dim = graphs.first().map_or(0, |g| g.node_feature_dim());
        let edge_dim = graphs.first().and_then(|g| g.edge_feature_dim());
        let mut node_offsets = vec![0];
        let mut edge_offsets = vec![0];
        let mut edges = Vec::new();
        let mut x = Vec::new();
        let mut e = Vec::new();
        let mut graph_id = Vec::new();
        for (gi, g) in graphs.iter().enumerate() {
            if g.node_feature_dim() != node_dim {
                return Err(GraphError::MixedWidths("node feature"));
            }
            if g.edge_feature_dim() != edge_dim {
                return Err(GraphError::MixedWidths("edge feature"));
            }
            let off = *node_offsets.last().expect("non-empty");
            edges.extend(g.edges.iter().map(|&(s, d)| (s + off, d + off)));
            x.extend_from_slice(g.node_features.data());
            if let Some(ef) = &g.edge_features {
                e.extend_from_slice(ef.data());
            }
            graph_id.extend(std::iter::repeat_n(gi, g.num_nodes));
            node_offsets.push(off + g.num_nodes);
            edge_offsets.push(edges.len());
        }
        let num_nodes = *node_offsets.last().expect("non-empty");
        let node_features = Tensor::new(vec![num_nodes, node_dim], x).expect("shape");
        let edge_features = edge_dim.map(|d| Tensor::new(vec![edges.len(), d], e).expect("shape"));
        Ok(GraphBatch {
            num_nodes,
            edges,
            node_features,
            edge_features,
            node_offsets,
            edge_offsets,
            graph_id,
            labels: graphs.iter().map(|g| g.labels.clone()).collect(),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.num_nodes, &self.edges)
    }

    /// Nodes per graph.
    pub fn graph_sizes(&self) -> Vec<usize> {
        self.node_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Node labels of every graph, concatenated. `None` unless all graphs carry node labels.
    pub fn node_labels(&self) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(self.num_nodes);
        for l in &self.labels {
            match l {
                Labels::Node(y) => out.extend_from_slice(y),
                _ => return None,
            }
        }
        Some(out)
    }

    pub fn edge_labels(&self) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(self.num_edges());
        for l in &self.labels {
            match l {
                Labels::Edge(y) => out.extend_from_slice(y),
                _ => return None,
            }
        }
        Some(out)
    }

    pub fn graph_classes(&self) -> Option<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| match l {
                Labels::GraphClass(c) => Some(*c),
                _ => None,
            })
            .collect()
    }

    pub fn graph_values(&self) -> Option<Vec<f64>> {
        self.labels
            .iter()
            .map(|l| match l {
                Labels::GraphValue(v) => Some(*v),
                _ => None,
            })
            .collect()
    }

    /// Splits the batch back into its member graphs.
    pub fn unbatch(&self) -> Vec<Graph> {
        (0..self.num_graphs())
            .map(|g| {
                let (n0, n1) = (self.node_offsets[g], self.node_offsets[g + 1]);
                let (e0, e1) = (self.edge_offsets[g], self.edge_offsets[g + 1]);
                let rows: Vec<usize> = (n0..n1).collect();
                let erows: Vec<usize> = (e0..e1).collect();
                Graph {
                    num_nodes: n1 - n0,
                    edges: self.edges[e0..e1]
                        .iter()
                        .map(|&(s, d)| (s - n0, d - n0))
                        .collect(),
                    node_features: self.node_features.select_rows(&rows),
                    edge_features: self.edge_features.as_ref().map(|e| e.select_rows(&erows)),
                    labels: self.labels[g].clone(),
                }
            })
            .collect()
    }

    /// Rows `node_offsets[g]..node_offsets[g+1]` of a per-node tensor.
    pub fn slice_nodes(&self, t: &Tensor, g: usize) -> Tensor {
        let rows: Vec<usize> = (self.node_offsets[g]..self.node_offsets[g + 1]).collect();
        t.select_rows(&rows)
    }

    pub fn slice_edges(&self, t: &Tensor, g: usize) -> Tensor {
        let rows: Vec<usize> = (self.edge_offsets[g]..self.edge_offsets[g + 1]).collect();
        t.select_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::both_directions;

    fn graph(n: usize, pairs: &[(usize, usize)], fill: f64) -> Graph {
        Graph::new(
            n,
            both_directions(pairs),
            Tensor::full(&[n, 2], fill),
            None,
            Labels::Node(vec![0; n]),
        )
        .unwrap()
    }

    #[test]
    fn single_graph_round_trip() {
        let g = graph(3, &[(0, 1), (1, 2)], 1.0);
        let b = GraphBatch::new(std::slice::from_ref(&g)).unwrap();
        assert_eq!(b.unbatch(), vec![g]);
    }

    #[test]
    fn offsets_shift_edges() {
        let a = graph(3, &[(0, 1)], 1.0);
        let b = graph(4, &[(0, 1), (2, 3)], 2.0);
        let batch = GraphBatch::new(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(batch.num_nodes, 7);
        assert!(batch.edges.contains(&(3, 4)));
        assert_eq!(batch.graph_id, vec![0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(batch.unbatch(), vec![a, b]);
        // block diagonal
        for &(s, d) in &batch.edges {
            assert_eq!(batch.graph_id[s], batch.graph_id[d]);
        }
    }

    #[test]
    fn mixed_widths_rejected() {
        let a = graph(2, &[(0, 1)], 1.0);
        let mut b = graph(2, &[(0, 1)], 1.0);
        b.node_features = Tensor::zeros(&[2, 3]);
        assert!(GraphBatch::new(&[a, b]).is_err());
    }
}
