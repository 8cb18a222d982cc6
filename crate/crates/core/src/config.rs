//! Run configuration: models, endpoints, sampling parameters, kernel,
//! concurrency and cache location. Loaded from TOML with flag-style
//! overrides applied by the CLI; a snapshot is persisted into every run
//! directory so results stay auditable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::RateLimit;
use crate::kernel::KernelSpec;
use crate::pipeline::{Method, TaskKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    /// Model whose uncertainty is being measured.
    pub target: String,
    /// Model that generates input clarifications.
    pub clarification: String,
    /// Sentence embedding model.
    pub embedding: String,
    /// Model used for correctness and equivalence judgments.
    pub judge: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            target: "gpt-4o-mini".into(),
            clarification: "gpt-4o".into(),
            embedding: "text-embedding-3-small".into(),
            judge: "gpt-4.1".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EndpointConfig {
    pub chat_base_url: String,
    pub embedding_base_url: String,
    /// Env var names; credentials themselves never live in config files.
    pub api_key_env: String,
    pub embedding_api_key_env: String,
    pub timeout_seconds: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            chat_base_url: "https://api.openai.com/v1".into(),
            embedding_base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            embedding_api_key_env: "OPENAI_API_KEY".into(),
            timeout_seconds: 120,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SamplingConfig {
    /// Answers drawn per clarification (m).
    pub answers_per_clarification: usize,
    /// Multinomial sampling temperature for answers.
    pub temperature: f64,
    /// Temperature for the single clarification call.
    pub clarification_temperature: f64,
    /// Temperature for the best-effort answer used by correctness labeling.
    pub best_effort_temperature: f64,
    pub answer_max_tokens: u32,
    pub clarification_max_tokens: u32,
    pub judge_max_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            answers_per_clarification: 10,
            temperature: 0.5,
            clarification_temperature: 0.0,
            best_effort_temperature: 0.1,
            answer_max_tokens: 256,
            clarification_max_tokens: 2048,
            judge_max_tokens: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ConcurrencyConfig {
    /// Bound on in-flight provider requests.
    pub max_in_flight: usize,
    /// Questions processed in parallel.
    pub questions: usize,
    pub rate_limit: Option<RateLimit>,
}

impl Default for ConcurrencyConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 8,
            questions: 4,
            rate_limit: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub models: ModelConfig,
    pub endpoints: EndpointConfig,
    pub sampling: SamplingConfig,
    pub kernel: KernelSpec,
    pub concurrency: ConcurrencyConfig,
    pub cache_root: PathBuf,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub task_kind: TaskKind,
    /// Deterministic subsample of the dataset (seeded by `seed`).
    pub subsample: Option<usize>,
    pub methods: Vec<Method>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            models: ModelConfig::default(),
            endpoints: EndpointConfig::default(),
            sampling: SamplingConfig::default(),
            kernel: KernelSpec::default(),
            concurrency: ConcurrencyConfig::default(),
            cache_root: PathBuf::from("cache"),
            seed: 0,
            dataset: None,
            task_kind: TaskKind::AmbigQa,
            subsample: None,
            methods: vec![Method::Spectral],
        }
    }
}

impl RunConfig {
    pub fn from_toml_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })?;
        Ok(config)
    }

    /// Validate and report every offending field at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let temp_range = 0.0..=2.0;
        if self.sampling.answers_per_clarification == 0 {
            problems.push("sampling.answers_per_clarification must be at least 1".to_string());
        }
        for (name, value) in [
            ("sampling.temperature", self.sampling.temperature),
            (
                "sampling.clarification_temperature",
                self.sampling.clarification_temperature,
            ),
            (
                "sampling.best_effort_temperature",
                self.sampling.best_effort_temperature,
            ),
        ] {
            if !value.is_finite() || !temp_range.contains(&value) {
                problems.push(format!("{name} must lie in [0, 2], got {value}"));
            }
        }
        if let Err(e) = self.kernel.validate() {
            problems.push(format!("kernel: {e}"));
        }
        if self.concurrency.max_in_flight == 0 {
            problems.push("concurrency.max_in_flight must be at least 1".to_string());
        }
        if self.concurrency.questions == 0 {
            problems.push("concurrency.questions must be at least 1".to_string());
        }
        if let Some(rate) = &self.concurrency.rate_limit {
            if !rate.requests_per_second.is_finite() || rate.requests_per_second <= 0.0 {
                problems.push(format!(
                    "concurrency.rate_limit.requests_per_second must be positive, got {}",
                    rate.requests_per_second
                ));
            }
        }
        for (name, value) in [
            ("models.target", &self.models.target),
            ("models.clarification", &self.models.clarification),
            ("models.embedding", &self.models.embedding),
            ("models.judge", &self.models.judge),
        ] {
            if value.is_empty() {
                problems.push(format!("{name} must not be empty"));
            }
        }
        if self.methods.is_empty() {
            problems.push("methods must name at least one scoring method".to_string());
        }
        if self.subsample == Some(0) {
            problems.push("subsample must be at least 1 when set".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}
