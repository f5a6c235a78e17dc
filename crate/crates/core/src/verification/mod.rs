//! Oracles and property harnesses that back the correctness claims of the
//! layers: literal-loop reference forwards, the rest-sum identity,
//! permutation equivariance, neighbour-order invariance, the zero-encoder
//! reduction and per-layer gradient checks.

mod harness;
mod layer_check;
mod oracle;

pub use harness::{
    batch_consistency, embeddings, equivariance_harness, neighbour_order_harness,
    reduction_harness, with_zero_encoders,
};
pub use layer_check::{layer_gradcheck, LayerGradCheck, LayerVariant};
pub use oracle::{
    naive_forward_oracle, naive_gatedgcn_layer, naive_gcn_layer, rest_sum_identity_error,
    NaiveEmbeddings,
};

use crate::graph::{both_directions, Graph, Labels};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Undirected random graph: each pair is connected with probability `p` and
/// stored in both directions. Node features are standard normal, edge
/// features (when `edge_dim` is set) uniform in `[0, 1)`. No labels.
pub fn random_graph(
    n: usize,
    p: f64,
    d_in: usize,
    edge_dim: Option<usize>,
    rng: &mut Rng,
) -> Graph {
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.bernoulli(p) {
                pairs.push((a, b));
            }
        }
    }
    let edges = both_directions(&pairs);
    let mut x = Tensor::zeros(&[n, d_in]);
    for v in x.data_mut() {
        *v = rng.normal();
    }
    let e = edge_dim.map(|de| {
        let mut t = Tensor::zeros(&[edges.len(), de]);
        for v in t.data_mut() {
            *v = rng.uniform();
        }
        t
    });
    Graph::new(n, edges, x, e, Labels::None).expect("valid by construction")
}

/// Node embeddings of an oracle run as a tensor, for comparisons.
pub fn rows_to_tensor(rows: &[Vec<f64>], cols: usize) -> Tensor {
    Tensor::from_rows(rows, cols).expect("rectangular rows")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TaskKind;
    use crate::layers::{gcn_messages, BaseKind, Model, ModelConfig, ModelDims};
    use crate::tensor::Tape;

    fn model(base: BaseKind, nlmi: bool, k: usize, d: usize, edge_in: Option<usize>) -> Model {
        let dims = ModelDims {
            task: TaskKind::NodeClass,
            node_in: 3,
            edge_in,
            out: 2,
        };
        let mut m = Model::new(ModelConfig::new(base, nlmi, k, d), dims, &mut Rng::new(7)).unwrap();
        // non-trivial running statistics
        let mut rng = Rng::new(8);
        for r in &mut m.bn {
            for v in r.mean.data_mut() {
                *v = rng.uniform_range(-0.3, 0.3);
            }
            for v in r.var.data_mut() {
                *v = rng.uniform_range(0.5, 2.0);
            }
        }
        m
    }

    #[test]
    fn identity_holds_on_gcn_messages() {
        let mut rng = Rng::new(1);
        for _ in 0..5 {
            let g = random_graph(9, 0.4, 4, None, &mut rng);
            let mut tape = Tape::new();
            let h = tape.constant(g.node_features.clone());
            let w = tape.constant(crate::layers::uniform_init(&[4, 4], 4, &mut rng));
            let (m, tot) = gcn_messages(&mut tape, h, &g.topology(), w).unwrap();
            let err = rest_sum_identity_error(&g, tape.value(m), tape.value(tot));
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn oracle_matches_every_variant() {
        let mut rng = Rng::new(2);
        for base in [BaseKind::Gcn, BaseKind::GatedGcn] {
            for nlmi in [false, true] {
                for edge_in in [None, Some(2)] {
                    let m = model(base, nlmi, 2, 5, edge_in);
                    let g = random_graph(7, 0.4, 3, edge_in, &mut rng);
                    let (h, e) = embeddings(&m, &g).unwrap();
                    let naive = naive_forward_oracle(&m, &g);
                    let hn = rows_to_tensor(&naive.h, 5);
                    assert!(h.max_abs_diff(&hn) < 1e-10, "{base} nlmi={nlmi}");
                    if let Some(e) = e {
                        let en = rows_to_tensor(&naive.e.unwrap(), 5);
                        assert!(e.max_abs_diff(&en) < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn harnesses_pass_on_small_models() {
        let mut rng = Rng::new(3);
        for base in [BaseKind::Gcn, BaseKind::GatedGcn] {
            let m = model(base, true, 2, 4, None);
            let g = random_graph(8, 0.4, 3, None, &mut rng);
            assert!(equivariance_harness(&m, &g, 3, &mut rng).unwrap() < 1e-9);
            assert!(neighbour_order_harness(&m, &g, 3, &mut rng).unwrap() < 1e-12);
            let base_model = model(base, false, 2, 4, None);
            let zero = with_zero_encoders(&base_model);
            assert_eq!(
                reduction_harness(&base_model, &zero, std::slice::from_ref(&g)).unwrap(),
                0.0
            );
            let g2 = random_graph(5, 0.5, 3, None, &mut rng);
            assert_eq!(batch_consistency(&m, &[g, g2]).unwrap(), 0.0);
        }
    }

    #[test]
    fn layer_gradchecks_pass() {
        for v in LayerVariant::ALL {
            let res = layer_gradcheck(v, 3, 5, 4, 1e-5).unwrap();
            assert!(res.max_rel_error() < 1e-4, "{v}: {:?}", res.worst());
            assert!(res.report.checked > 0);
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in LayerVariant::ALL {
            assert_eq!(v.name().parse::<LayerVariant>().unwrap(), v);
        }
        assert!("gat".parse::<LayerVariant>().is_err());
    }
}
