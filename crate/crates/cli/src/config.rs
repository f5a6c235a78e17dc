//! Run configuration files.
//!
//! A run file is JSON with a `version` field. Unknown keys are rejected at
//! every level so a misspelt option fails loudly instead of silently falling
//! back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nlmi_core::graph::{Dataset, DatasetSpec};
use nlmi_core::layers::{BaseKind, ModelConfig, Terms};
use nlmi_core::training::TrainConfig;

use crate::CliError;

pub const RUN_CONFIG_VERSION: u32 = 1;

/// Where the graphs come from: a generator spec or a saved dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Generate(DatasetSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub dataset: DatasetSource,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub layers: Option<usize>,
    pub base: Option<BaseKind>,
    pub nlmi: Option<bool>,
    pub terms: Option<Terms>,
}

impl RunConfig {
    /// Reads and validates a run file. A relative dataset file path is
    /// resolved against the directory holding the run file.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = read(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let DatasetSource::File(p) = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(k) = o.layers {
            self.model.layers = k;
        }
        if let Some(b) = o.base {
            self.model.base = b;
        }
        if let Some(n) = o.nlmi {
            self.model.nlmi = n;
        }
        if let Some(t) = o.terms {
            self.model.terms = t;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != RUN_CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "run config version {} is not supported (expected {RUN_CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must list at least one seed".into()));
        }
        if let DatasetSource::Generate(spec) = &self.dataset {
            spec.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn dataset(&self) -> Result<Dataset, CliError> {
        match &self.dataset {
            DatasetSource::Generate(spec) => {
                spec.generate().map_err(|e| CliError::Config(e.to_string()))
            }
            DatasetSource::File(p) => Dataset::load(p).map_err(|e| CliError::Config(e.to_string())),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }
}

/// A dataset spec file holds either a bare [`DatasetSpec`] or a run file
/// whose dataset is generated.
pub fn load_dataset_spec(path: &Path) -> Result<DatasetSpec, CliError> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let spec = if value.get("version").is_some() {
        match RunConfig::load(path)?.dataset {
            DatasetSource::Generate(spec) => spec,
            DatasetSource::File(_) => {
                return Err(CliError::Config(
                    "run config points at a dataset file; nothing to generate".into(),
                ))
            }
        }
    } else {
        serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    spec.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(spec)
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> &'static str {
        r#"{
            "version": 1,
            "dataset": { "file": "graphs.json" },
            "model": { "base": "gcn", "nlmi": true, "layers": 4, "hidden": 16 },
            "out_dir": "out",
            "seeds": [1, 2]
        }"#
    }

    #[test]
    fn relative_dataset_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, sample()).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(
            cfg.dataset,
            DatasetSource::File(dir.path().join("graphs.json"))
        );
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut cfg: RunConfig = serde_json::from_str(sample()).unwrap();
        cfg.apply(&Overrides {
            seed: Some(7),
            layers: Some(1),
            base: Some(BaseKind::GatedGcn),
            nlmi: Some(false),
            terms: Some("self,msg".parse().unwrap()),
            out: Some("elsewhere".into()),
        })
        .unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.model.layers, 1);
        assert_eq!(cfg.model.base, BaseKind::GatedGcn);
        assert!(!cfg.model.nlmi);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn round_trips_through_json() {
        let cfg: RunConfig = serde_json::from_str(sample()).unwrap();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn invalid_model_after_overrides_is_a_config_error() {
        let mut cfg: RunConfig = serde_json::from_str(sample()).unwrap();
        cfg.model.hidden = 0;
        let err = cfg.apply(&Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
