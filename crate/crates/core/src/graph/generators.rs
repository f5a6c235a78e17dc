//! Synthetic graph tasks with exact label oracles.
//!
//! Every generator is a pure function of its parameters and the [`Rng`] it
//! is handed. Each covers one task type: community detection and planted
//! pattern recognition (node classification), tour-edge prediction (edge
//! classification), a closed-form structural regression target, and
//! community-count graph classification.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use super::{both_directions, Graph, GraphError, Labels};
use crate::rng::Rng;
use crate::tensor::Tensor;

fn param_err(msg: impl Into<String>) -> GraphError {
    GraphError::Parameter(msg.into())
}

fn check_prob(name: &str, p: f64) -> Result<(), GraphError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(param_err(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

/// Stochastic block model with community ids as node labels.
///
/// Nodes are split into contiguous, near-equal blocks. A pair in the same
/// block is connected with probability `p_within`, otherwise `p_between`.
/// Node features are `n_communities` wide: a random `hint_fraction` of each
/// community (at least one node) carries the one-hot community id, all other
/// rows are zero, and Gaussian noise of std `feature_noise` is added to every
/// entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmParams {
    pub n_nodes: usize,
    pub n_communities: usize,
    pub p_within: f64,
    pub p_between: f64,
    #[serde(default = "default_hint_fraction")]
    pub hint_fraction: f64,
    #[serde(default)]
    pub feature_noise: f64,
}

fn default_hint_fraction() -> f64 {
    0.2
}

impl SbmParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.n_communities < 2 {
            return Err(param_err("n_communities must be at least 2"));
        }
        if self.n_nodes < self.n_communities {
            return Err(param_err("n_nodes must be at least n_communities"));
        }
        check_prob("p_within", self.p_within)?;
        check_prob("p_between", self.p_between)?;
        check_prob("hint_fraction", self.hint_fraction)?;
        if self.p_between >= self.p_within {
            return Err(param_err("p_between must be smaller than p_within"));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(param_err("feature_noise must be non-negative"));
        }
        Ok(())
    }

    pub fn community_of(&self, node: usize) -> usize {
        node * self.n_communities / self.n_nodes
    }
}

pub fn gen_sbm_communities(params: &SbmParams, rng: &mut Rng) -> Result<Graph, GraphError> {
    params.validate()?;
    let n = params.n_nodes;
    let k = params.n_communities;
    let labels: Vec<usize> = (0..n).map(|u| params.community_of(u)).collect();

    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] {
                params.p_within
            } else {
                params.p_between
            };
            if rng.bernoulli(p) {
                pairs.push((i, j));
            }
        }
    }

    let mut x = Tensor::zeros(&[n, k]);
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|&u| labels[u] == c).collect();
        let count =
            ((params.hint_fraction * members.len() as f64).ceil() as usize).clamp(1, members.len());
        let mut chosen = members.clone();
        rng.shuffle(&mut chosen);
        for &u in &chosen[..count] {
            x.data_mut()[u * k + c] = 1.0;
        }
    }
    if params.feature_noise > 0.0 {
        for v in x.data_mut() {
            *v += params.feature_noise * rng.normal();
        }
    }
    Graph::new(n, both_directions(&pairs), x, None, Labels::Node(labels))
}

/// Random base graph with a denser planted subgraph; planted nodes get label 1.
///
/// `pattern_size` nodes are drawn uniformly. Pairs inside the pattern connect
/// with probability `p_pattern`, all other pairs with `p_base`. Node features
/// are i.i.d. uniform in `[0, 1)`, so only structure identifies the pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternParams {
    pub n_nodes: usize,
    pub pattern_size: usize,
    pub p_base: f64,
    pub p_pattern: f64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
}

fn default_feature_dim() -> usize {
    3
}

impl PatternParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.pattern_size == 0 || self.pattern_size >= self.n_nodes {
            return Err(param_err("pattern_size must be in 1..n_nodes"));
        }
        check_prob("p_base", self.p_base)?;
        check_prob("p_pattern", self.p_pattern)?;
        if self.p_base >= self.p_pattern {
            return Err(param_err("p_base must be smaller than p_pattern"));
        }
        if self.feature_dim == 0 {
            return Err(param_err("feature_dim must be positive"));
        }
        Ok(())
    }
}

pub fn gen_planted_pattern(params: &PatternParams, rng: &mut Rng) -> Result<Graph, GraphError> {
    params.validate()?;
    let n = params.n_nodes;
    let mut order = rng.permutation(n);
    order.truncate(params.pattern_size);
    let mut labels = vec![0; n];
    for &u in &order {
        labels[u] = 1;
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == 1 && labels[j] == 1 {
                params.p_pattern
            } else {
                params.p_base
            };
            if rng.bernoulli(p) {
                pairs.push((i, j));
            }
        }
    }
    let x: Vec<f64> = (0..n * params.feature_dim).map(|_| rng.uniform()).collect();
    let x = Tensor::new(vec![n, params.feature_dim], x).expect("shape");
    Graph::new(n, both_directions(&pairs), x, None, Labels::Node(labels))
}

/// Euclidean TSP on random cities in the unit square, labelled by the exact
/// optimal tour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TspParams {
    pub n_cities: usize,
    pub k_nn: usize,
}

pub const MAX_TSP_CITIES: usize = 10;

impl TspParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.n_cities < 3 || self.n_cities > MAX_TSP_CITIES {
            return Err(param_err(format!(
                "n_cities must be in 3..={MAX_TSP_CITIES} for exhaustive search"
            )));
        }
        if self.k_nn == 0 || self.k_nn >= self.n_cities {
            return Err(param_err("k_nn must be in 1..n_cities"));
        }
        Ok(())
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Length of the closed tour visiting `tour` in order.
pub fn tour_length(cities: &[(f64, f64)], tour: &[usize]) -> f64 {
    (0..tour.len())
        .map(|i| dist(cities[tour[i]], cities[tour[(i + 1) % tour.len()]]))
        .sum()
}

/// Exhaustive optimal tour.
///
/// Tours start at city 0 and are enumerated in lexicographic order, one
/// orientation each (second city smaller than last). A tour replaces the
/// incumbent only if shorter by more than `1e-12`, so among equal-length
/// optima the lexicographically smallest is returned.
pub fn optimal_tour(cities: &[(f64, f64)]) -> (Vec<usize>, f64) {
    let n = cities.len();
    assert!(n >= 3, "a tour needs at least three cities");
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (1..n).permutations(n - 1) {
        if perm[0] > perm[n - 2] {
            continue;
        }
        let mut tour = Vec::with_capacity(n);
        tour.push(0);
        tour.extend_from_slice(&perm);
        let len = tour_length(cities, &tour);
        match &best {
            Some((_, b)) if len >= b - 1e-12 => {}
            _ => best = Some((tour, len)),
        }
    }
    best.expect("at least one tour")
}

/// Symmetric k-nearest-neighbour graph over `cities` with tour-edge labels.
///
/// `{u, v}` is an edge when either endpoint is among the other's `k`
/// nearest cities (ties broken by index). Edges are stored as sorted pairs,
/// each in both directions. Node features are coordinates, edge features
/// the Euclidean length. Fails if the optimal tour needs an edge outside the
/// k-NN graph, since the labels would no longer describe a tour.
pub fn tsp_graph_from_cities(cities: &[(f64, f64)], k_nn: usize) -> Result<Graph, GraphError> {
    let n = cities.len();
    let mut adj = vec![vec![false; n]; n];
    for u in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&v| v != u).collect();
        others.sort_by(|&a, &b| {
            dist(cities[u], cities[a])
                .total_cmp(&dist(cities[u], cities[b]))
                .then(a.cmp(&b))
        });
        for &v in others.iter().take(k_nn) {
            adj[u][v] = true;
            adj[v][u] = true;
        }
    }
    let (tour, _) = optimal_tour(cities);
    let mut on_tour = vec![vec![false; n]; n];
    for i in 0..n {
        let (a, b) = (tour[i], tour[(i + 1) % n]);
        if !adj[a][b] {
            return Err(GraphError::TourEdgeMissing(a.min(b), a.max(b)));
        }
        on_tour[a][b] = true;
        on_tour[b][a] = true;
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| adj[a][b])
        .collect();
    let edges = both_directions(&pairs);
    let labels: Vec<usize> = edges.iter().map(|&(s, d)| on_tour[s][d] as usize).collect();
    let e: Vec<f64> = edges
        .iter()
        .map(|&(s, d)| dist(cities[s], cities[d]))
        .collect();
    let x: Vec<f64> = cities.iter().flat_map(|&(a, b)| [a, b]).collect();
    Graph::new(
        n,
        edges.clone(),
        Tensor::new(vec![n, 2], x).expect("shape"),
        Some(Tensor::new(vec![edges.len(), 1], e).expect("shape")),
        Labels::Edge(labels),
    )
}

pub fn gen_tsp_instance(params: &TspParams, rng: &mut Rng) -> Result<Graph, GraphError> {
    params.validate()?;
    let cities: Vec<(f64, f64)> = (0..params.n_cities)
        .map(|_| (rng.uniform(), rng.uniform()))
        .collect();
    tsp_graph_from_cities(&cities, params.k_nn)
}

/// Random connected graph regressed onto a closed-form structural target:
/// `triangles / n + 0.5 * mean_degree`, plus Gaussian noise of std
/// `target_noise`.
///
/// Connectivity comes from a random recursive tree (node `i` attaches to a
/// uniform earlier node); every remaining pair is added with probability
/// `extra_edge_prob`. Node features one-hot encode a uniform random type out
/// of `num_types`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionParams {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub extra_edge_prob: f64,
    #[serde(default = "default_num_types")]
    pub num_types: usize,
    #[serde(default)]
    pub target_noise: f64,
}

fn default_num_types() -> usize {
    4
}

impl RegressionParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.min_nodes < 2 || self.min_nodes > self.max_nodes {
            return Err(param_err("need 2 <= min_nodes <= max_nodes"));
        }
        check_prob("extra_edge_prob", self.extra_edge_prob)?;
        if self.num_types == 0 {
            return Err(param_err("num_types must be positive"));
        }
        if !(self.target_noise >= 0.0) {
            return Err(param_err("target_noise must be non-negative"));
        }
        Ok(())
    }
}

/// Undirected triangles, reading each unordered pair off the edge list.
pub fn count_triangles(graph: &Graph) -> usize {
    let n = graph.num_nodes;
    let mut adj = vec![vec![false; n]; n];
    for &(s, d) in &graph.edges {
        if s != d {
            adj[s][d] = true;
            adj[d][s] = true;
        }
    }
    let mut count = 0;
    for u in 0..n {
        for v in u + 1..n {
            if !adj[u][v] {
                continue;
            }
            count += (v + 1..n).filter(|&w| adj[u][w] && adj[v][w]).count();
        }
    }
    count
}

/// Noise-free regression target of a graph stored with both edge directions.
pub fn regression_target(graph: &Graph) -> f64 {
    let n = graph.num_nodes as f64;
    let mean_degree = graph.num_edges() as f64 / n;
    count_triangles(graph) as f64 / n + 0.5 * mean_degree
}

#[allow(clippy::needless_range_loop)]
pub fn gen_graph_regression(params: &RegressionParams, rng: &mut Rng) -> Result<Graph, GraphError> {
    params.validate()?;
    let n = params.min_nodes + rng.below(params.max_nodes - params.min_nodes + 1);
    let mut adj = vec![vec![false; n]; n];
    let mut pairs = Vec::new();
    for i in 1..n {
        let j = rng.below(i);
        adj[i][j] = true;
        adj[j][i] = true;
        pairs.push((j, i));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !adj[i][j] && rng.bernoulli(params.extra_edge_prob) {
                adj[i][j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    let mut x = Tensor::zeros(&[n, params.num_types]);
    for u in 0..n {
        let t = rng.below(params.num_types);
        x.data_mut()[u * params.num_types + t] = 1.0;
    }
    let mut g = Graph::new(n, both_directions(&pairs), x, None, Labels::None)?;
    let mut y = regression_target(&g);
    if params.target_noise > 0.0 {
        y += params.target_noise * rng.normal();
    }
    g.labels = Labels::GraphValue(y);
    Ok(g)
}

/// Graph classification: how many communities does an SBM graph have?
///
/// The class is drawn uniformly from `community_counts` and the graph is a
/// block model with that many blocks. Node features are a constant 1 plus a
/// uniform noise channel, so the class is only visible through structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityCountParams {
    pub n_nodes: usize,
    pub community_counts: Vec<usize>,
    pub p_within: f64,
    pub p_between: f64,
}

impl CommunityCountParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.community_counts.len() < 2 {
            return Err(param_err("need at least two community counts"));
        }
        for &k in &self.community_counts {
            SbmParams {
                n_nodes: self.n_nodes,
                n_communities: k,
                p_within: self.p_within,
                p_between: self.p_between,
                hint_fraction: 0.0,
                feature_noise: 0.0,
            }
            .validate()?;
        }
        Ok(())
    }
}

pub fn gen_community_count(
    params: &CommunityCountParams,
    rng: &mut Rng,
) -> Result<Graph, GraphError> {
    params.validate()?;
    let class = rng.below(params.community_counts.len());
    let sbm = SbmParams {
        n_nodes: params.n_nodes,
        n_communities: params.community_counts[class],
        p_within: params.p_within,
        p_between: params.p_between,
        hint_fraction: 0.0,
        feature_noise: 0.0,
    };
    let n = params.n_nodes;
    let structural = gen_sbm_communities(&sbm, rng)?;
    let x: Vec<f64> = (0..n).flat_map(|_| [1.0, rng.uniform()]).collect();
    Graph::new(
        n,
        structural.edges,
        Tensor::new(vec![n, 2], x).expect("shape"),
        None,
        Labels::GraphClass(class),
    )
}
