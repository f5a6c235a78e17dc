//! One function per subcommand. Each returns the text to print on success;
//! file outputs go under the paths the caller supplies.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use nlmi_core::graph::{Dataset, Split};
use nlmi_core::layers::{Model, Terms};
use nlmi_core::training::{
    evaluate, run_seeds, summarize, write_metrics_csv, EvalResult, LossSpec, Summary, TrainOutcome,
};
use nlmi_core::verification::{layer_gradcheck, LayerVariant};

use crate::config::{load_dataset_spec, RunConfig};
use crate::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Materialises the dataset described by `spec_path` (optionally with a
/// different seed) into `out`.
pub fn gen(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<String, CliError> {
    let mut spec = load_dataset_spec(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = spec
        .generate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    write(out, &data.to_json())?;
    Ok(format!(
        "wrote {} ({} task, {}/{}/{} graphs) to {}",
        spec.generator.name(),
        spec.task,
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.display()
    ))
}

/// Files written for one seed of a training run.
pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_seed{seed}.json"))
}

fn write_outcomes(dir: &Path, outcomes: &[TrainOutcome]) -> Result<Summary, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for o in outcomes {
        let mp = metrics_path(dir, o.seed);
        write_metrics_csv(&mp, &o.history).map_err(io_err(&mp))?;
        o.best_model.save(&checkpoint_path(dir, o.seed))?;
    }
    let summary = summarize(outcomes);
    write(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

fn describe(summary: &Summary) -> String {
    let mut s = String::new();
    for seed in &summary.seeds {
        let _ = writeln!(
            s,
            "seed {}: test {} {:.4} (best epoch {} of {})",
            seed.seed,
            summary.metric.name(),
            seed.value,
            seed.best_epoch,
            seed.epochs
        );
    }
    let _ = write!(
        s,
        "{} {:.4} +- {:.4} over {} seeds",
        summary.metric.name(),
        summary.mean,
        summary.std,
        summary.seeds.len()
    );
    s
}

/// Trains one model per seed. Writes the resolved run config, a metrics CSV
/// and best-validation checkpoint per seed, and `summary.json`.
pub fn train(cfg: &RunConfig) -> Result<String, CliError> {
    let data = cfg.dataset()?;
    // the resolved config, overrides included, re-runs this exact experiment
    write(&cfg.out_dir.join("config.json"), &cfg.to_json())?;
    let outcomes = run_seeds(&data, &cfg.model, &cfg.train, &cfg.seeds)?;
    let summary = write_outcomes(&cfg.out_dir, &outcomes)?;
    Ok(format!(
        "{}: {}\nresults in {}",
        cfg.model.variant_name(),
        describe(&summary),
        cfg.out_dir.display()
    ))
}

#[derive(Debug, Serialize)]
struct EvalReport<'a> {
    split: &'a str,
    #[serde(flatten)]
    result: EvalResult,
}

/// Scores a saved checkpoint on one split of a saved dataset.
pub fn eval(
    checkpoint: &Path,
    dataset: &Path,
    split: Split,
    batch_size: usize,
) -> Result<String, CliError> {
    let model = Model::load(checkpoint)?;
    let data = Dataset::load(dataset).map_err(|e| CliError::Config(e.to_string()))?;
    if data.spec.task != model.dims.task {
        return Err(CliError::Config(format!(
            "checkpoint is a {} model but the dataset is {}",
            model.dims.task, data.spec.task
        )));
    }
    if batch_size == 0 {
        return Err(CliError::Config("batch size must be positive".into()));
    }
    // class weights only affect the reported loss, never the metric
    let spec = LossSpec::from_training_split(&data.train, &model.dims, true);
    let result = evaluate(&model, data.split(split), batch_size, &spec)?;
    if !result.loss.is_finite() {
        return Err(CliError::Numerical(format!(
            "non-finite loss {} on {}",
            result.loss,
            split.name()
        )));
    }
    Ok(serde_json::to_string_pretty(&EvalReport {
        split: split.name(),
        result,
    })
    .expect("report serializes"))
}

/// Finite-difference check of one layer; a numerical error above `tol`
/// fails the command.
pub fn gradcheck(
    variant: LayerVariant,
    width: usize,
    nodes: usize,
    seed: u64,
    step: f64,
    tol: f64,
) -> Result<String, CliError> {
    if width == 0 || nodes < 2 {
        return Err(CliError::Config(
            "gradcheck needs width >= 1 and at least 2 nodes".into(),
        ));
    }
    if !(step > 0.0 && tol > 0.0) {
        return Err(CliError::Config(
            "step and tolerance must be positive".into(),
        ));
    }
    let res = layer_gradcheck(variant, width, nodes, seed, step)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let (worst, err) = res.worst();
    let line = format!(
        "{variant} d={width} n={nodes} seed={seed}: max rel err {err:.3e} (`{worst}`), {} coordinates checked, {} skipped at kinks",
        res.report.checked, res.report.skipped
    );
    if err < tol {
        Ok(format!("{line}\nPASS (tolerance {tol:e})"))
    } else {
        Err(CliError::Numerical(format!(
            "{line}\nFAIL (tolerance {tol:e})"
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub terms: Terms,
    pub summary: Summary,
}

/// Runs the four-row term ablation of an NLMI model. Each row trains every
/// seed with one subset of the self, message and encoding terms; the rows go
/// to `ablation.json` and `ablation.csv`, the seed outputs to one
/// sub-directory per row.
pub fn ablate(cfg: &RunConfig) -> Result<String, CliError> {
    let data = cfg.dataset()?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.nlmi = true;
    write(&cfg.out_dir.join("config.json"), &cfg.to_json())?;
    let mut rows = Vec::new();
    for terms in Terms::ABLATION_ROWS {
        model_cfg.terms = terms;
        let outcomes = run_seeds(&data, &model_cfg, &cfg.train, &cfg.seeds)?;
        let dir = cfg.out_dir.join(terms.to_string().replace(',', "+"));
        let summary = write_outcomes(&dir, &outcomes)?;
        rows.push(AblationRow { terms, summary });
    }
    let metric = rows[0].summary.metric.name();
    let mut csv = String::from("terms,metric,mean,std,seeds\n");
    let mut table = format!("{:<14} {:>10} {:>10}\n", "terms", metric, "std");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{metric},{},{},{}",
            r.terms.to_string().replace(',', "+"),
            r.summary.mean,
            r.summary.std,
            r.summary.seeds.len()
        );
        let _ = writeln!(
            table,
            "{:<14} {:>10.4} {:>10.4}",
            r.terms.to_string(),
            r.summary.mean,
            r.summary.std
        );
    }
    write(&cfg.out_dir.join("ablation.csv"), &csv)?;
    write(
        &cfg.out_dir.join("ablation.json"),
        &serde_json::to_string_pretty(&rows).expect("rows serialize"),
    )?;
    Ok(format!(
        "{}{} ablation, {} seeds per row",
        table,
        model_cfg.base,
        cfg.seeds.len()
    ))
}
