use nlmi_core::graph::generators::{SbmParams, TspParams};
use nlmi_core::graph::{Dataset, DatasetSpec, GeneratorParams, TaskKind};
use nlmi_core::layers::{BaseKind, Model, ModelConfig, ModelDims};
use nlmi_core::training::{
    evaluate, metrics_csv, run_seeds, summarize, train_loop, LossSpec, StopReason, TrainConfig,
};

fn sbm(train: usize, seed: u64) -> Dataset {
    DatasetSpec {
        task: TaskKind::NodeClass,
        generator: GeneratorParams::Sbm(SbmParams {
            n_nodes: 16,
            n_communities: 2,
            p_within: 0.5,
            p_between: 0.05,
            hint_fraction: 0.25,
            feature_noise: 0.5,
        }),
        train,
        val: 4,
        test: 4,
        seed,
    }
    .generate()
    .unwrap()
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn history_has_train_and_val_rows_per_epoch_and_one_test_row() {
    let data = sbm(8, 1);
    let out = train_loop(
        &data,
        &ModelConfig::new(BaseKind::GatedGcn, true, 2, 8),
        &short(4),
        3,
    )
    .unwrap();
    assert_eq!(out.epochs_run, 4);
    assert_eq!(out.stop_reason, StopReason::MaxEpochs);
    assert_eq!(out.history.len(), 2 * 4 + 1);
    let test_rows: Vec<_> = out.history.iter().filter(|r| r.split == "test").collect();
    assert_eq!(test_rows.len(), 1);
    assert_eq!(test_rows[0].epoch, out.best_epoch);
    let csv = metrics_csv(&out.history);
    assert_eq!(csv.lines().count(), out.history.len() + 1);
}

#[test]
fn saved_best_model_reproduces_the_test_score() {
    let data = sbm(8, 2);
    let cfg = short(3);
    let out = train_loop(&data, &ModelConfig::new(BaseKind::Gcn, true, 2, 8), &cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.json");
    out.best_model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    let spec = LossSpec::from_training_split(&data.train, &loaded.dims, cfg.balance_classes);
    let again = evaluate(&loaded, &data.test, cfg.batch_size, &spec).unwrap();
    assert_eq!(again, out.test);
}

#[test]
fn seeds_change_results_and_summary_is_population_statistics() {
    let data = sbm(8, 3);
    let outs = run_seeds(
        &data,
        &ModelConfig::new(BaseKind::Gcn, false, 1, 8),
        &short(2),
        &[1, 2, 3],
    )
    .unwrap();
    assert_ne!(outs[0].best_model, outs[1].best_model);
    let s = summarize(&outs);
    let vals: Vec<f64> = outs.iter().map(|o| o.test.value).collect();
    let mean = vals.iter().sum::<f64>() / 3.0;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
    assert_eq!(s.seeds.len(), 3);
    assert!((s.mean - mean).abs() < 1e-15);
    assert!((s.std - var.sqrt()).abs() < 1e-15);
}

#[test]
fn edge_prediction_trains_on_tsp_graphs() {
    let data = DatasetSpec {
        task: TaskKind::EdgePred,
        generator: GeneratorParams::Tsp(TspParams {
            n_cities: 6,
            k_nn: 3,
        }),
        train: 8,
        val: 2,
        test: 2,
        seed: 4,
    }
    .generate()
    .unwrap();
    let dims = ModelDims::from_dataset(&data);
    assert_eq!(dims.out, 1);
    assert_eq!(dims.edge_in, Some(1));
    let out = train_loop(
        &data,
        &ModelConfig::new(BaseKind::GatedGcn, true, 2, 8),
        &short(2),
        1,
    )
    .unwrap();
    assert!(out.test.loss.is_finite());
    assert!((0.0..=1.0).contains(&out.test.value));
}

#[test]
fn self_loops_are_rejected_for_edge_prediction() {
    let dims = ModelDims {
        task: TaskKind::EdgePred,
        node_in: 2,
        edge_in: Some(1),
        out: 1,
    };
    let mut cfg = ModelConfig::new(BaseKind::GatedGcn, true, 1, 4);
    cfg.self_loops = true;
    assert!(Model::new(cfg, dims, &mut nlmi_core::Rng::new(0)).is_err());
}
