//! File formats the CLI reads: schema specs, environment profiles, and run
//! configs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use rqplan_core::mdp::QualityRewardConfig;
use rqplan_core::qnet::TrainingConfig;
use rqplan_core::qte::{QteProfile, StatCostModel};
use rqplan_core::sim_env::EnvironmentConfig;
use rqplan_core::workload::{ApproxRule, AttrGenPolicy, Query, QuerySchema, WorkloadGenConfig};

/// Schema file: the query schema plus per-attribute generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub schema: QuerySchema,
    pub gen: GenSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSection {
    pub max_extent_days: f64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    pub attrs: Vec<AttrGenPolicy>,
}

fn default_noise_sigma() -> f64 {
    0.25
}

impl SchemaSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading schema file {}", path.display()))?;
        let spec: SchemaSpec = serde_json::from_str(&text)
            .with_context(|| format!("parsing schema file {}", path.display()))?;
        spec.schema.validate()?;
        Ok(spec)
    }

    pub fn gen_config(&self, n: usize, seed: u64, schema_ref: String) -> WorkloadGenConfig {
        WorkloadGenConfig {
            num_queries: n,
            max_extent_days: self.gen.max_extent_days,
            noise_sigma: self.gen.noise_sigma,
            seed,
            attr_policies: self.gen.attrs.clone(),
            schema_ref,
        }
    }
}

/// Environment profile consumed by `synth-env`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvProfile {
    #[serde(flatten)]
    pub env: EnvironmentConfig,
    #[serde(default)]
    pub approx_rules: Vec<ApproxRule>,
}

impl EnvProfile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading profile {}", path.display()))?;
        let profile: EnvProfile = serde_json::from_str(&text)
            .with_context(|| format!("parsing profile {}", path.display()))?;
        profile.env.validate()?;
        Ok(profile)
    }
}

/// Which option subspace an agent trains over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrainSpace {
    #[default]
    Hint,
    Full,
    ApproxStage2,
}

/// The estimator section of a run config: kind, error sigma, and the cost
/// model in one block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QteSection {
    #[serde(default = "default_qte_kind")]
    pub kind: rqplan_core::qte::QteKind,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_unit_cost")]
    pub unit_cost_ms: f64,
    #[serde(default = "default_overhead")]
    pub overhead_ms: f64,
    #[serde(default)]
    pub cost_noise: bool,
}

fn default_qte_kind() -> rqplan_core::qte::QteKind {
    rqplan_core::qte::QteKind::Accurate
}

fn default_unit_cost() -> f64 {
    40.0
}

fn default_overhead() -> f64 {
    10.0
}

impl Default for QteSection {
    fn default() -> Self {
        QteSection {
            kind: default_qte_kind(),
            sigma: 0.0,
            unit_cost_ms: 40.0,
            overhead_ms: 10.0,
            cost_noise: false,
        }
    }
}

impl QteSection {
    pub fn profile(&self) -> QteProfile {
        QteProfile {
            kind: self.kind,
            sigma: self.sigma,
            cost_noise: self.cost_noise,
        }
    }

    pub fn cost_model(&self) -> StatCostModel {
        StatCostModel {
            unit_cost_ms: self.unit_cost_ms,
            overhead_ms: self.overhead_ms,
        }
    }
}

/// Run config shared by train / rewrite / classify-train / evaluate / curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub qte: QteSection,
    /// Must match the rules the environment table was synthesized over.
    #[serde(default)]
    pub approx_rules: Vec<ApproxRule>,
    #[serde(default = "default_adherence")]
    pub hint_adherence_prob: f64,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub train_space: TrainSpace,
    /// Quality-aware reward weight; set for one-stage / stage-two agents.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Planning time stage-two training episodes start from.
    #[serde(default)]
    pub initial_elapsed_ms: u64,
    #[serde(default = "default_classifier_cost_ms")]
    pub classifier_cost_ms: f64,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_edges")]
    pub bucket_edges: Vec<usize>,
}

fn default_adherence() -> f64 {
    1.0
}

fn default_classifier_cost_ms() -> f64 {
    2.0
}

fn default_knn_k() -> usize {
    5
}

fn default_edges() -> Vec<usize> {
    vec![0, 1, 2, 3, 4, 5]
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            qte: QteSection::default(),
            approx_rules: Vec::new(),
            hint_adherence_prob: 1.0,
            training: TrainingConfig::default(),
            train_space: TrainSpace::default(),
            beta: None,
            initial_elapsed_ms: 0,
            classifier_cost_ms: 2.0,
            knn_k: 5,
            bucket_edges: default_edges(),
        }
    }
}

impl RunConfig {
    pub fn load_or_default(path: Option<&PathBuf>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.qte.profile().validate()?;
        Ok(cfg)
    }

    pub fn training_with(&self, seed: Option<u64>) -> Result<TrainingConfig> {
        let mut training = self.training.clone();
        if let Some(seed) = seed {
            training.seed = seed;
        }
        if let Some(beta) = self.beta {
            training.quality = Some(QualityRewardConfig::new(beta)?);
        }
        Ok(training)
    }
}

/// Load a workload and the schema its queries reference. The schema_ref is
/// resolved relative to the workload file's directory, then as given.
pub fn load_workload_with_schema(workload_path: &Path) -> Result<(Vec<Query>, QuerySchema)> {
    let queries = rqplan_core::workload::load_workload(workload_path)
        .with_context(|| format!("reading workload {}", workload_path.display()))?;
    let schema_ref = queries
        .first()
        .map(|q| q.schema_ref.clone())
        .context("workload is empty, cannot resolve its schema")?;
    let candidates = [
        workload_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&schema_ref),
        PathBuf::from(&schema_ref),
    ];
    for candidate in &candidates {
        if candidate.is_file() {
            return Ok((queries, SchemaSpec::load(candidate)?.schema));
        }
    }
    anyhow::bail!(
        "schema file `{schema_ref}` referenced by {} not found",
        workload_path.display()
    )
}
