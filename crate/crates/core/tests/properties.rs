//! Property tests over randomly drawn graphs, models and configurations.

use proptest::prelude::*;

use nlmi_core::graph::generators::SbmParams;
use nlmi_core::graph::{
    Dataset, DatasetSpec, GeneratorParams, Graph, GraphBatch, Labels, TaskKind,
};
use nlmi_core::layers::{
    gcn_messages, uniform_init, BaseKind, Model, ModelConfig, ModelDims, Terms,
};
use nlmi_core::training::{cross_entropy, weighted_accuracy, PlateauScheduler, ScheduleEvent};
use nlmi_core::verification::{
    batch_consistency, equivariance_harness, neighbour_order_harness, random_graph,
    rest_sum_identity_error,
};
use nlmi_core::{Rng, Tape, Tensor};

fn graph_from(n: usize, p: f64, edge_dim: Option<usize>, seed: u64) -> Graph {
    random_graph(n, p, 3, edge_dim, &mut Rng::new(seed))
}

fn model_from(base: BaseKind, nlmi: bool, layers: usize, hidden: usize, seed: u64) -> Model {
    let dims = ModelDims {
        task: TaskKind::NodeClass,
        node_in: 3,
        edge_in: None,
        out: 2,
    };
    Model::new(
        ModelConfig::new(base, nlmi, layers, hidden),
        dims,
        &mut Rng::new(seed),
    )
    .unwrap()
}

fn base_strategy() -> impl Strategy<Value = BaseKind> {
    prop_oneof![Just(BaseKind::Gcn), Just(BaseKind::GatedGcn)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn batching_then_unbatching_is_lossless(
        sizes in prop::collection::vec((1usize..10, 0.0f64..1.0), 1..5),
        with_edges in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let graphs: Vec<Graph> = sizes
            .iter()
            .enumerate()
            .map(|(i, &(n, p))| graph_from(n, p, with_edges.then_some(2), seed.wrapping_add(i as u64)))
            .collect();
        let batch = GraphBatch::new(&graphs).unwrap();
        prop_assert_eq!(batch.num_nodes, graphs.iter().map(|g| g.num_nodes).sum::<usize>());
        prop_assert!(batch.edges.iter().all(|&(s, d)| batch.graph_id[s] == batch.graph_id[d]));
        prop_assert_eq!(batch.unbatch(), graphs);
    }

    #[test]
    fn rest_sums_match_direct_sums(n in 1usize..20, p in 0.0f64..1.0, d in 1usize..16, seed in any::<u64>()) {
        let g = graph_from(n, p, None, seed);
        let mut rng = Rng::new(seed ^ 1);
        let mut tape = Tape::new();
        let h = tape.constant(g.node_features.clone());
        let w = tape.constant(uniform_init(&[3, d], 3, &mut rng));
        let (m, tot) = gcn_messages(&mut tape, h, &g.topology(), w).unwrap();
        prop_assert!(rest_sum_identity_error(&g, tape.value(m), tape.value(tot)) < 1e-12);
    }

    #[test]
    fn terms_round_trip_through_text(s in any::<bool>(), m in any::<bool>(), e in any::<bool>()) {
        prop_assume!(s || m || e);
        let t = Terms { self_term: s, message: m, encoding: e };
        prop_assert_eq!(t.to_string().parse::<Terms>().unwrap(), t);
        let json = serde_json::to_string(&t).unwrap();
        prop_assert_eq!(serde_json::from_str::<Terms>(&json).unwrap(), t);
    }

    #[test]
    fn scheduler_never_raises_the_rate(losses in prop::collection::vec(0.0f64..10.0, 1..200), patience in 1usize..6) {
        let mut s = PlateauScheduler::new(1e-3, 0.5, patience, 1e-6);
        let mut lr = s.lr;
        for l in losses {
            let ev = s.step(l);
            prop_assert!(s.lr <= lr);
            match ev {
                ScheduleEvent::Stop => {
                    prop_assert!(s.lr < 1e-6);
                    break;
                }
                ScheduleEvent::Reduced => prop_assert_eq!(s.lr, lr * 0.5),
                _ => prop_assert_eq!(s.lr, lr),
            }
            lr = s.lr;
        }
    }

    #[test]
    fn weighted_accuracy_is_a_fraction(labels in prop::collection::vec(0usize..3, 1..40), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let pred: Vec<usize> = labels.iter().map(|_| rng.below(3)).collect();
        let w = weighted_accuracy(&pred, &labels);
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert_eq!(weighted_accuracy(&labels, &labels), 1.0);
    }

    #[test]
    fn cross_entropy_is_non_negative(rows in 1usize..8, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut logits = Tensor::zeros(&[rows, 3]);
        for v in logits.data_mut() {
            *v = rng.uniform_range(-5.0, 5.0);
        }
        let labels: Vec<usize> = (0..rows).map(|_| rng.below(3)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(logits);
        let loss = cross_entropy(&mut tape, x, &labels, Some(&[1.0, 2.0, 0.5])).unwrap();
        prop_assert!(tape.value(loss).data()[0] >= 0.0);
    }
}

proptest! {
    // every case runs several full forward passes
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn models_are_permutation_equivariant(
        base in base_strategy(),
        nlmi in any::<bool>(),
        layers in 1usize..4,
        n in 2usize..12,
        p in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let m = model_from(base, nlmi, layers, 6, seed);
        let g = graph_from(n, p, None, seed ^ 7);
        let mut rng = Rng::new(seed ^ 9);
        prop_assert!(equivariance_harness(&m, &g, 3, &mut rng).unwrap() < 1e-9);
        prop_assert!(neighbour_order_harness(&m, &g, 3, &mut rng).unwrap() < 1e-9);
    }

    #[test]
    fn batched_predictions_equal_single_graph_predictions(
        base in base_strategy(),
        nlmi in any::<bool>(),
        sizes in prop::collection::vec(1usize..10, 1..5),
        seed in any::<u64>(),
    ) {
        let m = model_from(base, nlmi, 2, 5, seed);
        let graphs: Vec<Graph> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| graph_from(n, 0.4, None, seed.wrapping_add(i as u64)))
            .collect();
        prop_assert_eq!(batch_consistency(&m, &graphs).unwrap(), 0.0);
    }

    #[test]
    fn checkpoints_restore_identical_predictions(base in base_strategy(), nlmi in any::<bool>(), seed in any::<u64>()) {
        let m = model_from(base, nlmi, 2, 4, seed);
        let back = Model::from_checkpoint(
            serde_json::from_str(&serde_json::to_string(&m.to_checkpoint()).unwrap()).unwrap(),
        )
        .unwrap();
        let batch = m.prepare(&[graph_from(6, 0.5, None, seed)]).unwrap();
        prop_assert_eq!(m.predict(&batch).unwrap(), back.predict(&batch).unwrap());
    }

    #[test]
    fn datasets_round_trip_through_json(n in 4usize..16, train in 0usize..4, seed in any::<u64>()) {
        let spec = DatasetSpec {
            task: TaskKind::NodeClass,
            generator: GeneratorParams::Sbm(SbmParams {
                n_nodes: n,
                n_communities: 2,
                p_within: 0.5,
                p_between: 0.1,
                hint_fraction: 0.25,
                feature_noise: 0.5,
            }),
            train,
            val: 1,
            test: 1,
            seed,
        };
        let data = spec.generate().unwrap();
        prop_assert!(data.val[0].labels != Labels::None);
        let back = Dataset::from_json(&data.to_json()).unwrap();
        prop_assert_eq!(back, data);
    }
}
