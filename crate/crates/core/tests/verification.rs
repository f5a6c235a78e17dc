//! The oracle and harness suite over the full grid of base family, depth and
//! width, twenty random graphs per cell.

use nlmi_core::graph::TaskKind;
use nlmi_core::layers::{BaseKind, Model, ModelConfig, ModelDims};
use nlmi_core::verification::{
    embeddings, equivariance_harness, naive_forward_oracle, neighbour_order_harness, random_graph,
    reduction_harness, rows_to_tensor, with_zero_encoders,
};
use nlmi_core::{Graph, Rng};

const GRAPHS_PER_CELL: usize = 20;

fn graphs(rng: &mut Rng, edge_in: Option<usize>) -> Vec<Graph> {
    (0..GRAPHS_PER_CELL)
        .map(|i| {
            // include single nodes and edgeless graphs among the draws
            let n = 1 + (i * 7) % 15;
            let p = if i % 5 == 0 {
                0.0
            } else {
                rng.uniform_range(0.15, 0.7)
            };
            random_graph(n, p, 3, edge_in, rng)
        })
        .collect()
}

fn model(
    base: BaseKind,
    nlmi: bool,
    k: usize,
    d: usize,
    edge_in: Option<usize>,
    self_loops: bool,
    rng: &mut Rng,
) -> Model {
    let dims = ModelDims {
        task: TaskKind::NodeClass,
        node_in: 3,
        edge_in,
        out: 2,
    };
    let mut cfg = ModelConfig::new(base, nlmi, k, d);
    cfg.self_loops = self_loops;
    let mut m = Model::new(cfg, dims, rng).unwrap();
    for r in &mut m.bn {
        for v in r.mean.data_mut() {
            *v = rng.uniform_range(-0.4, 0.4);
        }
        for v in r.var.data_mut() {
            *v = rng.uniform_range(0.5, 2.0);
        }
    }
    m
}

fn grid() -> impl Iterator<Item = (BaseKind, usize, usize)> {
    [BaseKind::Gcn, BaseKind::GatedGcn]
        .into_iter()
        .flat_map(|b| {
            [1, 4]
                .into_iter()
                .flat_map(move |k| [4, 16].into_iter().map(move |d| (b, k, d)))
        })
}

#[test]
fn equivariance_holds_across_the_grid() {
    let mut rng = Rng::new(11);
    for (base, k, d) in grid() {
        for nlmi in [false, true] {
            let m = model(base, nlmi, k, d, None, false, &mut rng);
            for g in graphs(&mut rng, None) {
                let dev = equivariance_harness(&m, &g, 2, &mut rng).unwrap();
                assert!(dev < 1e-9, "{base} nlmi={nlmi} K={k} d={d}: {dev:e}");
                let dev = neighbour_order_harness(&m, &g, 2, &mut rng).unwrap();
                assert!(dev < 1e-9, "{base} nlmi={nlmi} K={k} d={d}: {dev:e}");
            }
        }
    }
}

#[test]
fn zero_encoders_reduce_exactly_across_the_grid() {
    let mut rng = Rng::new(12);
    for (base, k, d) in grid() {
        let m = model(base, false, k, d, Some(2), false, &mut rng);
        let zero = with_zero_encoders(&m);
        let dev = reduction_harness(&m, &zero, &graphs(&mut rng, Some(2))).unwrap();
        assert_eq!(dev, 0.0, "{base} K={k} d={d}");
    }
}

#[test]
fn oracle_agrees_across_the_grid() {
    let mut rng = Rng::new(13);
    for (base, k, d) in grid() {
        for nlmi in [false, true] {
            for (edge_in, self_loops) in [(None, false), (Some(2), false), (None, true)] {
                let m = model(base, nlmi, k, d, edge_in, self_loops, &mut rng);
                for g in graphs(&mut rng, edge_in) {
                    let (h, e) = embeddings(&m, &g).unwrap();
                    let naive = naive_forward_oracle(&m, &g);
                    let dev = h.max_abs_diff(&rows_to_tensor(&naive.h, d));
                    assert!(
                        dev < 1e-10,
                        "{base} nlmi={nlmi} K={k} d={d} loops={self_loops}: {dev:e}"
                    );
                    if let (Some(e), Some(ne)) = (e, naive.e) {
                        if !ne.is_empty() {
                            assert!(e.max_abs_diff(&rows_to_tensor(&ne, d)) < 1e-10);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn isolated_nodes_keep_only_their_self_term() {
    // with no neighbours, message and encoding vanish for every variant
    let mut rng = Rng::new(14);
    let g = random_graph(4, 0.0, 3, None, &mut rng);
    for base in [BaseKind::Gcn, BaseKind::GatedGcn] {
        let plain = model(base, false, 2, 4, None, false, &mut rng);
        let nlmi = with_random_fc(with_zero_encoders(&plain), &mut rng);
        let (a, _) = embeddings(&plain, &g).unwrap();
        let (b, _) = embeddings(&nlmi, &g).unwrap();
        assert_eq!(a, b, "{base}");
    }
}

fn with_random_fc(mut m: Model, rng: &mut Rng) -> Model {
    use nlmi_core::layers::{LayerParams, Linear};
    let d = m.config.hidden;
    for layer in &mut m.params.layers {
        let fc = Some(Linear::init(2 * d, d, rng));
        match layer {
            LayerParams::Gcn(p) => p.fc = fc,
            LayerParams::GatedGcn(p) => p.fc = fc,
        }
    }
    m
}
