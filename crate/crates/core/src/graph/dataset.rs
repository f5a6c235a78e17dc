use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::generators::{
    gen_community_count, gen_graph_regression, gen_planted_pattern, gen_sbm_communities,
    gen_tsp_instance, CommunityCountParams, PatternParams, RegressionParams, SbmParams, TspParams,
};
use super::{Graph, GraphError, Labels};
use crate::rng::{sub_seed, Rng};
use crate::tensor::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Redraws allowed per graph when an instance generator rejects its draw
/// (e.g. a TSP tour edge outside the k-NN graph).
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed dataset file: {0}")]
    Malformed(String),
    #[error("dataset format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("generator `{generator}` produces {actual} tasks, the dataset declares {declared}")]
    TaskMismatch {
        generator: &'static str,
        declared: TaskKind,
        actual: TaskKind,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    NodeClass,
    GraphClass,
    EdgePred,
    GraphReg,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::NodeClass => "node-class",
            TaskKind::GraphClass => "graph-class",
            TaskKind::EdgePred => "edge-pred",
            TaskKind::GraphReg => "graph-reg",
        })
    }
}

/// Generator choice and its parameters, tagged by `name` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum GeneratorParams {
    Sbm(SbmParams),
    Pattern(PatternParams),
    Tsp(TspParams),
    Regression(RegressionParams),
    CommunityCount(CommunityCountParams),
}

impl GeneratorParams {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorParams::Sbm(_) => "sbm",
            GeneratorParams::Pattern(_) => "pattern",
            GeneratorParams::Tsp(_) => "tsp",
            GeneratorParams::Regression(_) => "regression",
            GeneratorParams::CommunityCount(_) => "community-count",
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            GeneratorParams::Sbm(_) | GeneratorParams::Pattern(_) => TaskKind::NodeClass,
            GeneratorParams::Tsp(_) => TaskKind::EdgePred,
            GeneratorParams::Regression(_) => TaskKind::GraphReg,
            GeneratorParams::CommunityCount(_) => TaskKind::GraphClass,
        }
    }

    pub fn generate(&self, rng: &mut Rng) -> Result<Graph, GraphError> {
        match self {
            GeneratorParams::Sbm(p) => gen_sbm_communities(p, rng),
            GeneratorParams::Pattern(p) => gen_planted_pattern(p, rng),
            GeneratorParams::Tsp(p) => gen_tsp_instance(p, rng),
            GeneratorParams::Regression(p) => gen_graph_regression(p, rng),
            GeneratorParams::CommunityCount(p) => gen_community_count(p, rng),
        }
    }

    fn validate(&self) -> Result<(), GraphError> {
        match self {
            GeneratorParams::Sbm(p) => p.validate(),
            GeneratorParams::Pattern(p) => p.validate(),
            GeneratorParams::Tsp(p) => p.validate(),
            GeneratorParams::Regression(p) => p.validate(),
            GeneratorParams::CommunityCount(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 100,
            Split::Val => 101,
            Split::Test => 102,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (train|val|test)")),
        }
    }
}

/// Everything needed to regenerate a dataset.
///
/// Graph `i` of a split is drawn from `Rng::new(sub_seed(sub_seed(seed, split_stream), i))`
/// with split streams 100/101/102 for train/val/test, so splits never share a draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: TaskKind,
    pub generator: GeneratorParams,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.generator.task() != self.task {
            return Err(DatasetError::TaskMismatch {
                generator: self.generator.name(),
                declared: self.task,
                actual: self.generator.task(),
            });
        }
        self.generator.validate()?;
        Ok(())
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn generate(&self) -> Result<Dataset, DatasetError> {
        self.validate()?;
        let mut out = Dataset {
            spec: self.clone(),
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for split in Split::ALL {
            let split_seed = sub_seed(self.seed, split.stream());
            let graphs = (0..self.split_size(split))
                .map(|i| self.draw(sub_seed(split_seed, i as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            *out.split_mut(split) = graphs;
        }
        Ok(out)
    }

    fn draw(&self, seed: u64) -> Result<Graph, DatasetError> {
        let mut rng = Rng::new(seed);
        let mut last = None;
        for _ in 0..MAX_ATTEMPTS {
            match self.generator.generate(&mut rng) {
                Ok(g) => return Ok(g),
                Err(e @ GraphError::TourEdgeMissing(..)) => last = Some(e),
                Err(e) => return Err(e.into()),
            }
        }
        Err(last.expect("at least one attempt").into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    n: usize,
    edges: Vec<[usize; 2]>,
    x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    e: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    y: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitsRecord {
    train: Vec<GraphRecord>,
    val: Vec<GraphRecord>,
    test: Vec<GraphRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    version: u32,
    spec: DatasetSpec,
    splits: SplitsRecord,
}

fn labels_to_json(labels: &Labels) -> Value {
    match labels {
        Labels::None => Value::Null,
        Labels::Node(y) | Labels::Edge(y) => Value::from(y.clone()),
        Labels::GraphClass(c) => Value::from(*c),
        Labels::GraphValue(v) => Value::from(*v),
    }
}

fn labels_from_json(task: TaskKind, y: &Value) -> Result<Labels, DatasetError> {
    let bad = || DatasetError::Malformed(format!("label `{y}` does not fit a {task} task"));
    if y.is_null() {
        return Ok(Labels::None);
    }
    let int_list = || -> Result<Vec<usize>, DatasetError> {
        y.as_array()
            .ok_or_else(bad)?
            .iter()
            .map(|v| v.as_u64().map(|u| u as usize).ok_or_else(bad))
            .collect()
    };
    Ok(match task {
        TaskKind::NodeClass => Labels::Node(int_list()?),
        TaskKind::EdgePred => Labels::Edge(int_list()?),
        TaskKind::GraphClass => Labels::GraphClass(y.as_u64().ok_or_else(bad)? as usize),
        TaskKind::GraphReg => Labels::GraphValue(y.as_f64().ok_or_else(bad)?),
    })
}

fn graph_to_record(g: &Graph) -> GraphRecord {
    GraphRecord {
        n: g.num_nodes,
        edges: g.edges.iter().map(|&(s, d)| [s, d]).collect(),
        x: g.node_features.to_rows(),
        e: g.edge_features.as_ref().map(|e| e.to_rows()),
        y: labels_to_json(&g.labels),
    }
}

fn rows_to_tensor(rows: &[Vec<f64>], what: &str) -> Result<Tensor, DatasetError> {
    let cols = rows.first().map_or(0, Vec::len);
    Tensor::from_rows(rows, cols)
        .map_err(|_| DatasetError::Malformed(format!("ragged {what} rows")))
}

fn graph_from_record(task: TaskKind, r: &GraphRecord) -> Result<Graph, DatasetError> {
    let x = rows_to_tensor(&r.x, "x")?;
    let e = r.e.as_deref().map(|e| rows_to_tensor(e, "e")).transpose()?;
    let edges = r.edges.iter().map(|&[s, d]| (s, d)).collect();
    Ok(Graph::new(r.n, edges, x, e, labels_from_json(task, &r.y)?)?)
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Graph] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<Graph> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn to_json(&self) -> String {
        let record = DatasetRecord {
            version: DATASET_FORMAT_VERSION,
            spec: self.spec.clone(),
            splits: SplitsRecord {
                train: self.train.iter().map(graph_to_record).collect(),
                val: self.val.iter().map(graph_to_record).collect(),
                test: self.test.iter().map(graph_to_record).collect(),
            },
        };
        serde_json::to_string(&record).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Dataset, DatasetError> {
        // Check the version before the strict parse so a newer file reports
        // a version error rather than an unknown-field error.
        let raw: Value =
            serde_json::from_str(text).map_err(|e| DatasetError::Malformed(e.to_string()))?;
        let version = raw
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| DatasetError::Malformed("missing `version`".into()))?;
        if version != DATASET_FORMAT_VERSION as u64 {
            return Err(DatasetError::Version {
                found: version as u32,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let record: DatasetRecord =
            serde_json::from_value(raw).map_err(|e| DatasetError::Malformed(e.to_string()))?;
        record.spec.validate()?;
        let task = record.spec.task;
        let conv = |rs: &[GraphRecord]| {
            rs.iter()
                .map(|r| graph_from_record(task, r))
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(Dataset {
            train: conv(&record.splits.train)?,
            val: conv(&record.splits.val)?,
            test: conv(&record.splits.test)?,
            spec: record.spec,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_json() + "\n").map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Dataset::from_json(&text)
    }
}
