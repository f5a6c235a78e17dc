use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn nlmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlmi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dataset_spec() -> Value {
    json!({
        "task": "node-class",
        "generator": {
            "name": "sbm",
            "n_nodes": 12,
            "n_communities": 2,
            "p_within": 0.5,
            "p_between": 0.1,
            "hint_fraction": 0.25,
            "feature_noise": 0.5
        },
        "train": 6,
        "val": 3,
        "test": 3,
        "seed": 5
    })
}

fn run_config(out: &Path, seeds: &[u64]) -> Value {
    json!({
        "version": 1,
        "dataset": { "generate": dataset_spec() },
        "model": { "base": "gatedgcn", "nlmi": true, "layers": 2, "hidden": 8 },
        "train": { "max_epochs": 3, "batch_size": 4 },
        "out_dir": out,
        "seeds": seeds
    })
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Metrics CSV without the wall-clock column.
fn timeless_csv(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn gradcheck_passes_on_nlmi_gatedgcn() {
    let o = nlmi(&[
        "gradcheck",
        "--variant",
        "nlmi-gatedgcn",
        "--width",
        "8",
        "--nodes",
        "6",
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASS"));
}

#[test]
fn gradcheck_above_tolerance_is_a_numerical_failure() {
    let o = nlmi(&[
        "gradcheck",
        "--variant",
        "gcn",
        "--width",
        "4",
        "--nodes",
        "5",
        "--tol",
        "1e-300",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FAIL"));
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let o = nlmi(&["gradcheck", "--variant", "gat"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_writes_one_summary_entry_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("run.json");
    write_json(&cfg, &run_config(&out, &[1, 2, 3, 4]));
    let o = nlmi(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["metric"], "weighted_accuracy");
    let seeds = summary["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 4);
    for (s, want) in seeds.iter().zip(1..) {
        assert_eq!(s["seed"], want);
        assert!(out.join(format!("metrics_seed{want}.csv")).exists());
        assert!(out.join(format!("checkpoint_seed{want}.json")).exists());
    }
    let header = fs::read_to_string(out.join("metrics_seed1.csv")).unwrap();
    assert!(header.starts_with("epoch,split,loss,metric,value,seconds\n"));
}

#[test]
fn saved_config_reruns_to_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let cfg = dir.path().join("run.json");
    write_json(&cfg, &run_config(&first, &[3]));
    // overrides end up in the saved config
    let o = nlmi(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--layers",
        "1",
        "--terms",
        "msg,enc",
        "--seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let saved = read_json(&first.join("config.json"));
    assert_eq!(saved["model"]["layers"], 1);
    assert_eq!(saved["model"]["terms"], "msg,enc");
    assert_eq!(saved["seeds"], json!([9]));

    let second = dir.path().join("second");
    let o = nlmi(&[
        "train",
        "--config",
        first.join("config.json").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        read_json(&first.join("summary.json")),
        read_json(&second.join("summary.json"))
    );
    assert_eq!(
        timeless_csv(&first.join("metrics_seed9.csv")),
        timeless_csv(&second.join("metrics_seed9.csv"))
    );
    assert_eq!(
        fs::read(first.join("checkpoint_seed9.json")).unwrap(),
        fs::read(second.join("checkpoint_seed9.json")).unwrap()
    );
}

#[test]
fn gen_then_eval_reproduces_the_training_test_score() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(&spec, &dataset_spec());
    let data = dir.path().join("data.json");
    let o = nlmi(&[
        "gen",
        "--config",
        spec.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let out = dir.path().join("run");
    let mut cfg = run_config(&out, &[2]);
    cfg["dataset"] = json!({ "file": "data.json" });
    let cfg_path = dir.path().join("run.json");
    write_json(&cfg_path, &cfg);
    let o = nlmi(&["train", "--config", cfg_path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trained = read_json(&out.join("summary.json"))["seeds"][0]["value"]
        .as_f64()
        .unwrap();

    let o = nlmi(&[
        "eval",
        "--checkpoint",
        out.join("checkpoint_seed2.json").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--split",
        "test",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["split"], "test");
    assert_eq!(report["metric"], "weighted_accuracy");
    assert_eq!(report["value"].as_f64().unwrap(), trained);
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    write_json(&spec, &dataset_spec());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        assert!(nlmi(&[
            "gen",
            "--config",
            spec.to_str().unwrap(),
            "--out",
            p.to_str().unwrap()
        ])
        .status
        .success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.json");
    nlmi(&[
        "gen",
        "--config",
        spec.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--seed",
        "6",
    ]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn ablate_emits_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    let cfg = dir.path().join("run.json");
    let mut v = run_config(&out, &[1]);
    v["train"]["max_epochs"] = json!(1);
    write_json(&cfg, &v);
    let o = nlmi(&["ablate", "--config", cfg.to_str().unwrap(), "--base", "gcn"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_json(&out.join("ablation.json"));
    let terms: Vec<&str> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["terms"].as_str().unwrap())
        .collect();
    assert_eq!(terms, ["self,msg", "self,enc", "msg,enc", "self,msg,enc"]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn config_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let cfg = dir.path().join("run.json");

    let mut typo = run_config(&out, &[1]);
    typo["train"]["learning_rate"] = json!(0.1);
    write_json(&cfg, &typo);
    let o = nlmi(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let mut version = run_config(&out, &[1]);
    version["version"] = json!(2);
    write_json(&cfg, &version);
    assert_eq!(
        nlmi(&["train", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );

    let mut no_seeds = run_config(&out, &[]);
    no_seeds["seeds"] = json!([]);
    write_json(&cfg, &no_seeds);
    assert_eq!(
        nlmi(&["train", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );

    write_json(&cfg, &run_config(&out, &[1]));
    let o = nlmi(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--terms",
        "self,bogus",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    assert_eq!(
        nlmi(&["train", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn exploding_learning_rate_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("boom");
    let cfg = dir.path().join("run.json");
    let mut v = run_config(&out, &[1]);
    v["model"]["base"] = json!("gcn");
    v["train"]["lr"] = json!(1e300);
    v["train"]["max_epochs"] = json!(5);
    write_json(&cfg, &v);
    let o = nlmi(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
