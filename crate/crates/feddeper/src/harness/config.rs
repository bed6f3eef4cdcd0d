//! Experiment configuration: JSON grammar, validation, and resolution into
//! runnable problem/model/hyper-parameter objects.
//!
//! Unknown keys are rejected everywhere for typo safety. Defaults follow the
//! standard operating point: eta 0.01, rho 0.03, lambda 0.5, tau 10, K 500,
//! mu 1.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::algorithms::{
    Algorithm, EvalData, HyperParams, ProblemData, SupervisedData,
};
use crate::data::{
    load_idx_dir, make_individual_test_sets, partition_iid, partition_sorted_noniid,
    synth_quadratic, QuadraticProblem, Split,
};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::numerics::ParamVector;

fn d_eta() -> f64 {
    0.01
}
fn d_rho() -> f64 {
    0.03
}
fn d_lambda() -> f64 {
    0.5
}
fn d_tau() -> usize {
    10
}
fn d_rounds() -> usize {
    500
}
fn d_batch() -> usize {
    20
}
fn d_mu() -> f64 {
    1.0
}
fn d_eval_every() -> usize {
    10
}
fn d_one() -> usize {
    1
}
fn d_true() -> bool {
    true
}
fn d_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    SyntheticQuadratic,
    IdxDir,
}

/// Data source. Quadratic fields: `clients`, `dim`, `spread`, `noise`.
/// IDX fields: `dir`, `subsample_train`, `subsample_test`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample_test: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    SortedNoniid,
    Iid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub scheme: SchemeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shards_per_client: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Quadratic,
    Logistic,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
}

/// JSON-facing hyper-parameters with defaults applied on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHyperParams {
    pub algorithm: Algorithm,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_tau")]
    pub tau: usize,
    #[serde(default = "d_rounds")]
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled: Option<usize>,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_mu")]
    pub mu: f64,
}

/// A full experiment description as read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    pub hyper: RawHyperParams,
    /// When present, the run executes every listed algorithm on shared
    /// seeds (sampling lineage is algorithm-independent, so the comparison
    /// is paired).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithms: Option<Vec<Algorithm>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_one")]
    pub seeds_per_cell: usize,
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    #[serde(default = "d_true")]
    pub parallel: bool,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parse and validate a config file.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::ConfigParse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    /// Semantic validation (field ranges, cross-field consistency, and
    /// referenced-file existence).
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, reason: String| Error::Config {
            field: name.into(),
            reason,
        };
        let h = &self.hyper;
        if !(h.eta > 0.0) || !h.eta.is_finite() {
            return Err(field("hyper.eta", format!("must be positive, got {}", h.eta)));
        }
        if !(h.rho >= 0.0) || !h.rho.is_finite() {
            return Err(field(
                "hyper.rho",
                format!("must be nonnegative, got {}", h.rho),
            ));
        }
        if !(0.0..=1.0).contains(&h.lambda) {
            return Err(field(
                "hyper.lambda",
                format!("must lie in [0, 1], got {}", h.lambda),
            ));
        }
        if !(h.mu >= 0.0) || !h.mu.is_finite() {
            return Err(field(
                "hyper.mu",
                format!("must be nonnegative, got {}", h.mu),
            ));
        }
        if h.tau == 0 {
            return Err(field("hyper.tau", "must be at least 1".into()));
        }
        if h.batch_size == 0 {
            return Err(field("hyper.batch_size", "must be at least 1".into()));
        }
        if let (Some(m), Some(n)) = (h.sampled, h.clients) {
            if m > n {
                return Err(field(
                    "hyper.sampled",
                    format!("m = {m} exceeds n = {n}"),
                ));
            }
        }
        if self.seeds_per_cell == 0 {
            return Err(field("seeds_per_cell", "must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(field("eval_every", "must be at least 1".into()));
        }
        if let Some(algorithms) = &self.algorithms {
            if algorithms.is_empty() {
                return Err(field("algorithms", "list must not be empty".into()));
            }
        }

        match self.dataset.kind {
            DatasetKind::SyntheticQuadratic => {
                if self.dataset.dir.is_some()
                    || self.dataset.subsample_train.is_some()
                    || self.dataset.subsample_test.is_some()
                {
                    return Err(field(
                        "dataset",
                        "idx_dir fields set on a synthetic_quadratic dataset".into(),
                    ));
                }
                if let Some(model) = &self.model {
                    if model.kind != ModelKind::Quadratic {
                        return Err(field(
                            "model.kind",
                            "synthetic_quadratic data requires the quadratic model".into(),
                        ));
                    }
                }
                if self.partition.is_some() {
                    return Err(field(
                        "partition",
                        "synthetic_quadratic assigns one center per client; no partition applies"
                            .into(),
                    ));
                }
                if let Some(spread) = self.dataset.spread {
                    if !(spread >= 0.0) || !spread.is_finite() {
                        return Err(field(
                            "dataset.spread",
                            format!("must be nonnegative, got {spread}"),
                        ));
                    }
                }
            }
            DatasetKind::IdxDir => {
                if self.dataset.clients.is_some()
                    || self.dataset.dim.is_some()
                    || self.dataset.spread.is_some()
                    || self.dataset.noise.is_some()
                {
                    return Err(field(
                        "dataset",
                        "synthetic_quadratic fields set on an idx_dir dataset".into(),
                    ));
                }
                let dir = self.dataset.dir.as_ref().ok_or_else(|| {
                    field("dataset.dir", "required for idx_dir datasets".into())
                })?;
                for name in [
                    "train-images-idx3-ubyte",
                    "train-labels-idx1-ubyte",
                    "t10k-images-idx3-ubyte",
                    "t10k-labels-idx1-ubyte",
                ] {
                    if !dir.join(name).is_file() {
                        return Err(field(
                            "dataset.dir",
                            format!("missing {name} under {}", dir.display()),
                        ));
                    }
                }
                if h.clients.is_none() {
                    return Err(field(
                        "hyper.clients",
                        "required for idx_dir datasets".into(),
                    ));
                }
                if let Some(model) = &self.model {
                    if model.kind == ModelKind::Quadratic {
                        return Err(field(
                            "model.kind",
                            "idx_dir data requires a classification model".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Algorithms this experiment runs.
    pub fn algorithm_list(&self) -> Vec<Algorithm> {
        self.algorithms
            .clone()
            .unwrap_or_else(|| vec![self.hyper.algorithm])
    }

    /// Cell seeds: `seed, seed + 1, ..`.
    pub fn cell_seeds(&self) -> Vec<u64> {
        (0..self.seeds_per_cell as u64)
            .map(|i| self.seed + i)
            .collect()
    }

    /// Build the runnable problem, model spec, and evaluation data.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let (spec, data, eval, x_star, data_clients) = match self.dataset.kind {
            DatasetKind::SyntheticQuadratic => {
                let clients = self.dataset.clients.unwrap_or(10);
                let dim = self.dataset.dim.unwrap_or(5);
                let spread = self.dataset.spread.unwrap_or(1.0);
                let noise = self.dataset.noise.unwrap_or(0.0);
                let problem = synth_quadratic(clients, dim, spread, self.seed)?;
                let problem = QuadraticProblem::new(problem.centers().to_vec(), noise)?;
                let x_star = problem.optimum();
                (
                    ModelSpec::Quadratic { dim },
                    ProblemData::Quadratic(problem),
                    None,
                    Some(x_star),
                    clients,
                )
            }
            DatasetKind::IdxDir => {
                let dir = self.dataset.dir.as_ref().expect("validated");
                let clients = self.hyper.clients.expect("validated");
                let mut train = load_idx_dir(dir, Split::Train)?;
                let mut test = load_idx_dir(dir, Split::Test)?;
                if let Some(count) = self.dataset.subsample_train {
                    train = train.subsample(count, self.seed)?;
                }
                if let Some(count) = self.dataset.subsample_test {
                    test = test.subsample(count, self.seed)?;
                }
                let partition = match self.partition.as_ref() {
                    Some(PartitionConfig {
                        scheme: SchemeKind::Iid,
                        ..
                    }) => partition_iid(&train, clients, self.seed)?,
                    Some(PartitionConfig {
                        scheme: SchemeKind::SortedNoniid,
                        shards_per_client,
                    }) => partition_sorted_noniid(
                        &train,
                        clients,
                        shards_per_client.unwrap_or(2),
                        self.seed,
                    )?,
                    None => partition_sorted_noniid(&train, clients, 2, self.seed)?,
                };
                let spec = match self.model.as_ref() {
                    Some(ModelConfig {
                        kind: ModelKind::Logistic,
                        ..
                    }) => ModelSpec::Logistic {
                        features: train.feature_dim(),
                        classes: train.num_classes(),
                    },
                    Some(ModelConfig {
                        kind: ModelKind::Mlp,
                        hidden,
                    }) => ModelSpec::mlp(
                        train.feature_dim(),
                        hidden.as_deref().unwrap_or(&[512, 256]),
                        train.num_classes(),
                    ),
                    None => {
                        ModelSpec::mlp(train.feature_dim(), &[512, 256], train.num_classes())
                    }
                    Some(ModelConfig {
                        kind: ModelKind::Quadratic,
                        ..
                    }) => unreachable!("rejected by validate"),
                };
                let individual = make_individual_test_sets(&test, clients, self.seed)?;
                let eval = EvalData {
                    test,
                    individual: Some(individual),
                    every: self.eval_every,
                };
                (
                    spec,
                    ProblemData::Supervised(SupervisedData::new(train, partition)?),
                    Some(eval),
                    None,
                    clients,
                )
            }
        };

        if let Some(n) = self.hyper.clients {
            if n != data_clients {
                return Err(Error::Config {
                    field: "hyper.clients".into(),
                    reason: format!("{n} clients configured but the dataset defines {data_clients}"),
                });
            }
        }
        let base_hyper = HyperParams {
            eta: self.hyper.eta,
            rho: self.hyper.rho,
            lambda: self.hyper.lambda,
            tau: self.hyper.tau,
            rounds: self.hyper.rounds,
            clients: data_clients,
            sampled: self.hyper.sampled.unwrap_or(data_clients),
            batch_size: self.hyper.batch_size,
            mu: self.hyper.mu,
            algorithm: self.hyper.algorithm,
        };
        base_hyper.validate()?;

        Ok(ResolvedExperiment {
            spec,
            data,
            eval,
            x_star,
            base_hyper,
            algorithms: self.algorithm_list(),
            seeds: self.cell_seeds(),
            diagnostics: self.diagnostics,
            parallel: self.parallel,
            out_dir: self.out_dir.clone(),
        })
    }
}

/// A config resolved into runnable objects. Datasets are loaded once and
/// shared by every (algorithm, seed) cell, which keeps comparisons paired.
pub struct ResolvedExperiment {
    pub spec: ModelSpec,
    pub data: ProblemData,
    pub eval: Option<EvalData>,
    pub x_star: Option<ParamVector>,
    pub base_hyper: HyperParams,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub diagnostics: bool,
    pub parallel: bool,
    pub out_dir: PathBuf,
}
