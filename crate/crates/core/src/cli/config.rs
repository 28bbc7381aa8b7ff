//! TOML pipeline configuration.
//!
//! ```toml
//! seed = 42
//! out = "runs/demo"
//! parallelism = 8
//! pathway = "ml"            # or "llm"
//!
//! [data]
//! train = "data/train.jsonl"
//! val = "data/val.jsonl"
//! test = ["data/reddit.jsonl", "data/implicit.csv"]
//! # or: source = "data/all.jsonl" for a seeded 80/10/10 split
//!
//! [routing]
//! tau_low = 0.005
//! tau_high = 0.995
//! max_tokens = 256
//!
//! [stage1]
//! endpoint = "http://127.0.0.1:8080"   # omit to use the trained baseline
//!
//! [analyst]
//! endpoint = "http://127.0.0.1:8081"   # or "mock"; omit to run cache-only
//! cache = "cache/features.jsonl"
//! max_attempts = 3
//!
//! [agents]
//! endpoint = "http://127.0.0.1:8081"   # or "mock"
//! personas = ["bullish", "bearish", "expert"]
//!
//! [models]
//! roster = ["logistic_regression", "linear_svm", "random_forest", "gradient_boosted_trees"]
//! cap = 0.5
//! cv_folds = 5
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::{RoutingConfig, SweepGrid};
use crate::error::{Error, Result};
use crate::mlmodels::{Hyperparams, ModelKind};
use crate::scorers::{AgentPersona, BaselineConfig, RetryPolicy};

/// Endpoint value selecting the bundled offline mock.
pub const MOCK_ENDPOINT: &str = "mock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Pathway {
    /// Persona agents vote, Stage 1 breaks ties.
    Llm,
    /// Weighted vote of Stage 1 and the feature models.
    Ml,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Vec<PathBuf>,
    /// Single labeled file split 80/10/10 under the pipeline seed.
    pub source: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalystConfig {
    pub endpoint: Option<String>,
    /// Defaults to `<out>/feature_cache.jsonl`.
    pub cache: Option<PathBuf>,
    pub max_attempts: usize,
}

impl Default for AnalystConfig {
    fn default() -> Self {
        AnalystConfig {
            endpoint: None,
            cache: None,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    pub endpoint: Option<String>,
    pub personas: Vec<AgentPersona>,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        AgentsConfig {
            endpoint: None,
            personas: AgentPersona::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub roster: Vec<ModelKind>,
    /// Upper bound on the Stage-1 weight.
    pub cap: f64,
    /// Cross-validation folds for grid search; below 2 disables it.
    pub cv_folds: usize,
    /// Candidate hyperparameters; the first is used when CV is off.
    pub grid: Vec<Hyperparams>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            roster: ModelKind::ALL.to_vec(),
            cap: 0.5,
            cv_folds: 5,
            grid: vec![Hyperparams::default()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub parallelism: usize,
    pub pathway: Pathway,
    pub data: DataConfig,
    pub routing: RoutingConfig,
    pub stage1: Stage1Config,
    /// `seed` is replaced by the pipeline seed.
    pub baseline: BaselineConfig,
    pub analyst: AnalystConfig,
    pub agents: AgentsConfig,
    pub models: ModelsConfig,
    pub sweep: SweepGrid,
    pub retry: RetryPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out: PathBuf::from("out"),
            parallelism: 4,
            pathway: Pathway::Ml,
            data: DataConfig::default(),
            routing: RoutingConfig::default(),
            stage1: Stage1Config::default(),
            baseline: BaselineConfig::default(),
            analyst: AnalystConfig::default(),
            agents: AgentsConfig::default(),
            models: ModelsConfig::default(),
            sweep: SweepGrid::default(),
            retry: RetryPolicy::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses, rebases relative paths onto the file's directory, validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.out);
        for p in [&mut cfg.data.train, &mut cfg.data.val, &mut cfg.data.source, &mut cfg.analyst.cache]
            .into_iter()
            .flatten()
        {
            rebase(base, p);
        }
        for p in &mut cfg.data.test {
            rebase(base, p);
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Applies derived values and checks invariants.
    pub fn finish(&mut self) -> Result<()> {
        self.baseline.seed = self.seed;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.routing.validate()?;
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if self.data.source.is_some() && (self.data.train.is_some() || self.data.val.is_some() || !self.data.test.is_empty()) {
            return Err(Error::Config("data.source excludes data.train, data.val and data.test".into()));
        }
        if !(self.models.cap > 0.0 && self.models.cap <= 1.0) {
            return Err(Error::Config(format!("models.cap must lie in (0, 1], got {}", self.models.cap)));
        }
        if self.models.roster.is_empty() && self.models.cap < 1.0 {
            return Err(Error::Config("an empty roster requires models.cap = 1".into()));
        }
        for (i, k) in self.models.roster.iter().enumerate() {
            if self.models.roster[..i].contains(k) {
                return Err(Error::Config(format!("models.roster lists {k} twice")));
            }
        }
        if self.models.grid.is_empty() {
            return Err(Error::Config("models.grid needs at least one point".into()));
        }
        if self.agents.personas.is_empty() {
            return Err(Error::Config("agents.personas is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.sweep.min_coverage) {
            return Err(Error::Config("sweep.min_coverage must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn cache_path(&self) -> PathBuf {
        self.analyst
            .cache
            .clone()
            .unwrap_or_else(|| self.out.join("feature_cache.jsonl"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
