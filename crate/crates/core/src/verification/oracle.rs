//! Reference forward passes written as literal loops over nodes and their
//! neighbours. They share no code with the vectorised layers: every product
//! is an explicit loop, and the sum of the other neighbours' messages is
//! recomputed for each neighbour instead of subtracted from a total.

#![allow(clippy::needless_range_loop)]

use crate::graph::Graph;
use crate::layers::{
    BnRunning, GatedGcnLayerParams, GcnLayerParams, LayerOptions, LayerParams, Linear, Model,
    BN_EPS,
};
use crate::tensor::Tensor;

type Rows = Vec<Vec<f64>>;

/// Node (and edge) embeddings computed by the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveEmbeddings {
    pub h: Rows,
    pub e: Option<Rows>,
}

/// `x W` for a row vector `x`.
fn row_times(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (k, n) = (w.rows(), w.cols());
    assert_eq!(x.len(), k, "row width");
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..k {
            s += x[i] * w.get2(i, j);
        }
        out[j] = s;
    }
    out
}

fn affine(x: &[f64], l: &Linear<Tensor>) -> Vec<f64> {
    let mut y = row_times(x, &l.weight);
    for (v, b) in y.iter_mut().zip(l.bias.data()) {
        *v += b;
    }
    y
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Incoming edge indices of every node, ordered by source id.
fn incoming(graph: &Graph) -> Vec<Vec<usize>> {
    let mut inc = vec![Vec::new(); graph.num_nodes];
    for (i, &(_, d)) in graph.edges.iter().enumerate() {
        inc[d].push(i);
    }
    for list in &mut inc {
        list.sort_by_key(|&i| (graph.edges[i].0, i));
    }
    inc
}

/// `sum_v fc([m_v | sum_{a != v} m_a])` over the messages into one node.
fn naive_encoding(messages: &[Vec<f64>], fc: &Linear<Tensor>, d: usize) -> Vec<f64> {
    let mut enc = vec![0.0; d];
    for (j, m) in messages.iter().enumerate() {
        let mut rest = vec![0.0; d];
        for (a, other) in messages.iter().enumerate() {
            if a != j {
                rest = add(&rest, other);
            }
        }
        let mut joined = m.clone();
        joined.extend_from_slice(&rest);
        enc = add(&enc, &affine(&joined, fc));
    }
    enc
}

/// One (NLMI-)GCN layer by loops.
pub fn naive_gcn_layer(
    graph: &Graph,
    h: &[Vec<f64>],
    p: &GcnLayerParams<Tensor>,
    opts: &LayerOptions,
) -> Rows {
    let d = p.weight.cols();
    let inc = incoming(graph);
    let mut out = Vec::with_capacity(graph.num_nodes);
    for u in 0..graph.num_nodes {
        let deg = inc[u].len();
        let messages: Rows = inc[u]
            .iter()
            .map(|&i| {
                let v = graph.edges[i].0;
                row_times(&h[v], &p.weight)
                    .into_iter()
                    .map(|x| x / deg as f64)
                    .collect()
            })
            .collect();
        let mut pre = vec![0.0; d];
        if opts.terms.self_term {
            if let Some(a) = &p.self_weight {
                pre = add(&pre, &row_times(&h[u], a));
            }
        }
        if opts.terms.message {
            for m in &messages {
                pre = add(&pre, m);
            }
        }
        if opts.terms.encoding {
            if let Some(fc) = &p.fc {
                pre = add(&pre, &naive_encoding(&messages, fc, d));
            }
        }
        let mut y = relu(&pre);
        if opts.residual {
            y = add(&y, &h[u]);
        }
        out.push(y);
    }
    out
}

/// One (NLMI-)GatedGCN layer by loops, with batch norm in evaluation mode.
pub fn naive_gatedgcn_layer(
    graph: &Graph,
    h: &[Vec<f64>],
    e: &[Vec<f64>],
    p: &GatedGcnLayerParams<Tensor>,
    running: &BnRunning,
    opts: &LayerOptions,
) -> (Rows, Rows) {
    let d = p.a.cols();
    let inc = incoming(graph);
    let e_pre: Rows = graph
        .edges
        .iter()
        .enumerate()
        .map(|(i, &(v, u))| {
            let s = add(&row_times(&h[u], &p.a), &row_times(&h[v], &p.b));
            add(&s, &row_times(&e[i], &p.c))
        })
        .collect();
    let mut h_out = Vec::with_capacity(graph.num_nodes);
    for u in 0..graph.num_nodes {
        let mut denom = vec![opts.gate_eps; d];
        for &i in &inc[u] {
            for c in 0..d {
                denom[c] += sigmoid(e_pre[i][c]);
            }
        }
        let messages: Rows = inc[u]
            .iter()
            .map(|&i| {
                let fh = row_times(&h[graph.edges[i].0], &p.f);
                (0..d)
                    .map(|c| sigmoid(e_pre[i][c]) / denom[c] * fh[c])
                    .collect()
            })
            .collect();
        let mut pre = vec![0.0; d];
        if opts.terms.self_term {
            pre = add(&pre, &row_times(&h[u], &p.a));
        }
        if opts.terms.message {
            for m in &messages {
                pre = add(&pre, m);
            }
        }
        if opts.terms.encoding {
            if let Some(fc) = &p.fc {
                pre = add(&pre, &naive_encoding(&messages, fc, d));
            }
        }
        let normed: Vec<f64> = (0..d)
            .map(|c| {
                let z = (pre[c] - running.mean.data()[c]) / (running.var.data()[c] + BN_EPS).sqrt();
                z * p.bn.gamma.data()[c] + p.bn.beta.data()[c]
            })
            .collect();
        let mut y = relu(&normed);
        if opts.residual {
            y = add(&y, &h[u]);
        }
        h_out.push(y);
    }
    let e_out = e_pre
        .iter()
        .zip(e)
        .map(|(pre, old)| {
            let y = relu(pre);
            if opts.residual {
                add(&y, old)
            } else {
                y
            }
        })
        .collect();
    (h_out, e_out)
}

/// Input encoders and all message-passing layers of `model` on one graph,
/// evaluation mode, by loops.
pub fn naive_forward_oracle(model: &Model, graph: &Graph) -> NaiveEmbeddings {
    let graph = if model.config.self_loops {
        graph.with_self_loops()
    } else {
        graph.clone()
    };
    let d = model.config.hidden;
    let opts = model.config.layer_options();
    let mut h: Rows = graph
        .node_features
        .to_rows()
        .iter()
        .map(|x| affine(x, &model.params.input))
        .collect();
    let mut e: Option<Rows> = match (&model.params.edge_input, &graph.edge_features) {
        (Some(enc), Some(ef)) => Some(ef.to_rows().iter().map(|x| affine(x, enc)).collect()),
        _ => None,
    };
    for (k, layer) in model.params.layers.iter().enumerate() {
        match layer {
            LayerParams::Gcn(p) => h = naive_gcn_layer(&graph, &h, p, &opts),
            LayerParams::GatedGcn(p) => {
                let e_in = e.unwrap_or_else(|| vec![vec![0.0; d]; graph.num_edges()]);
                let (h2, e2) = naive_gatedgcn_layer(&graph, &h, &e_in, p, &model.bn[k], &opts);
                h = h2;
                e = Some(e2);
            }
        }
    }
    NaiveEmbeddings { h, e }
}

/// Largest `|(m_{N(u)} - m_{v->u}) - sum_{a in N(u) - v} m_{a->u}|` over all
/// edges, for per-edge `messages` `[E, d]` into the nodes of `graph`. The
/// totals are formed in the canonical order, the rest-sums by direct loops.
pub fn rest_sum_identity_error(graph: &Graph, messages: &Tensor, totals: &Tensor) -> f64 {
    let inc = incoming(graph);
    let d = messages.cols();
    let mut worst = 0.0f64;
    for (u, list) in inc.iter().enumerate() {
        for &i in list {
            for c in 0..d {
                let mut rest = 0.0;
                for &a in list {
                    if a != i {
                        rest += messages.get2(a, c);
                    }
                }
                let by_subtraction = totals.get2(u, c) - messages.get2(i, c);
                worst = worst.max((by_subtraction - rest).abs());
            }
        }
    }
    worst
}
