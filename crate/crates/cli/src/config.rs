//! Pipeline configuration: one declarative TOML file, with a handful of
//! CLI flag overrides. Secrets never live here; API keys come from
//! `OMNI_API_KEY_<ENDPOINT>` environment variables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use omni_core::exporter::Predicate;
use omni_core::gateway::{ModelEndpoint, RetryPolicy};
use omni_core::sampler::{CandidateFilter, SelectionMode};
use omni_core::source::{DedupePolicy, SourceSpec};

use omni_core::scoring::ScoringConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config error: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub workers: usize,
    pub strict: bool,
    pub work_dir: PathBuf,
    pub sources: Vec<SourceConfig>,
    pub dedupe: DedupeConfig,
    pub transport: TransportConfig,
    pub endpoints: Vec<EndpointConfig>,
    pub generation: GenerationConfig,
    pub validation: ValidationConfig,
    pub scoring: ScoringSection,
    pub sampler: SamplerSection,
    pub export: ExportSection,
    pub stats: StatsSection,
    pub templates: TemplatesSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 4,
            strict: false,
            work_dir: PathBuf::from("omni-run"),
            sources: Vec::new(),
            dedupe: DedupeConfig::default(),
            transport: TransportConfig::default(),
            endpoints: Vec::new(),
            generation: GenerationConfig::default(),
            validation: ValidationConfig::default(),
            scoring: ScoringSection::default(),
            sampler: SamplerSection::default(),
            export: ExportSection::default(),
            stats: StatsSection::default(),
            templates: TemplatesSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_format_adapter")]
    pub format_adapter: String,
    pub field_mapping: BTreeMap<String, String>,
}

fn default_format_adapter() -> String {
    "jsonl".into()
}

impl SourceConfig {
    pub fn to_spec(&self) -> SourceSpec {
        SourceSpec {
            name: self.name.clone(),
            path: self.path.clone(),
            format_adapter: self.format_adapter.clone(),
            field_mapping: self.field_mapping.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupeConfig {
    pub policy: DedupePolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    /// `mock` or `http`.
    pub kind: String,
    /// Script file for the mock transport.
    pub script: Option<PathBuf>,
    /// Journal of raw request/response pairs.
    pub audit_log: Option<PathBuf>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { kind: "http".into(), script: None, audit_log: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub name: String,
    pub base_url: String,
    pub model_id: String,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_generation_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
}

fn default_max_concurrency() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    120_000
}

fn default_generation_temperature() -> f64 {
    0.6
}

fn default_max_output_tokens() -> u32 {
    16_384
}

impl EndpointConfig {
    pub fn to_endpoint(&self) -> ModelEndpoint {
        ModelEndpoint {
            name: self.name.clone(),
            base_url: self.base_url.clone(),
            model_id: self.model_id.clone(),
            max_concurrency: self.max_concurrency,
            timeout_ms: self.timeout_ms,
            retry: self.retry.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    /// Endpoint names acting as teachers.
    pub teachers: Vec<String>,
    pub per_teacher_count: usize,
    /// `whitespace` or `byte4`.
    pub tokenizer: String,
    pub system_prompt: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            teachers: Vec::new(),
            per_teacher_count: 1,
            tokenizer: "whitespace".into(),
            system_prompt: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    /// `cross` assigns each CoT a judge other than its teacher;
    /// any endpoint name forces a fixed judge.
    pub judge: String,
    pub re_ask_bound: u32,
    pub regen_budget: u32,
    /// Judging temperature override applied to validator calls.
    pub temperature: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { judge: "cross".into(), re_ask_bound: 2, regen_budget: 1, temperature: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    pub judge: String,
    pub alpha: f64,
    pub grading_scale_k: u8,
    pub n_evals_rv: u32,
    pub n_evals_cd: u32,
    pub l_min: Option<u64>,
    pub l_max: Option<u64>,
    pub temperature: f64,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self {
            judge: String::new(),
            alpha: 0.5,
            grading_scale_k: 9,
            n_evals_rv: 1,
            n_evals_cd: 1,
            l_min: None,
            l_max: None,
            temperature: 0.0,
        }
    }
}

impl ScoringSection {
    pub fn to_scoring_config(&self) -> Result<ScoringConfig, ConfigError> {
        let fixed_bounds = match (self.l_min, self.l_max) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => {
                return Err(ConfigError::Invalid(
                    "scoring.l_min and scoring.l_max must be set together".into(),
                ))
            }
        };
        let config = ScoringConfig {
            alpha: self.alpha,
            grading_scale_k: self.grading_scale_k,
            n_evals_rv: self.n_evals_rv,
            n_evals_cd: self.n_evals_cd,
            fixed_bounds,
        };
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    /// `weighted` runs the probability sampler; `rv_optimal`,
    /// `cd_optimal`, `combined` and `random` pick by range conformity.
    pub strategy: String,
    pub mu_cd: u8,
    pub beta: f64,
    pub samples_per_problem: usize,
    pub candidate_filter: CandidateFilter,
    pub rv_range: Option<[u8; 2]>,
    pub cd_range: Option<[u8; 2]>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            strategy: "weighted".into(),
            mu_cd: 5,
            beta: 0.5,
            samples_per_problem: 1,
            candidate_filter: CandidateFilter::FullyCorrect,
            rv_range: None,
            cd_range: None,
        }
    }
}

impl SamplerSection {
    pub fn selection_mode(&self) -> Result<Option<SelectionMode>, ConfigError> {
        match self.strategy.as_str() {
            "weighted" => Ok(None),
            "rv_optimal" => Ok(Some(SelectionMode::RvOptimal)),
            "cd_optimal" => Ok(Some(SelectionMode::CdOptimal)),
            "combined" => Ok(Some(SelectionMode::Combined)),
            "random" => Ok(Some(SelectionMode::Random)),
            other => Err(ConfigError::Invalid(format!("unknown sampler strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    pub sft: bool,
    pub dpo: bool,
    pub chosen_rv_range: [u8; 2],
    pub filter: Option<String>,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { sft: true, dpo: false, chosen_rv_range: [3, 5], filter: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    /// `none` or `domain_tag`.
    pub group_by: String,
    /// Corpus file to report on, relative to the work dir. Defaults to
    /// the scored corpus.
    pub input: Option<PathBuf>,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self { group_by: "none".into(), input: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplatesSection {
    pub dir: Option<PathBuf>,
}

/// Flag overrides; every one has a config-file equivalent.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mu_cd: Option<u8>,
    pub beta: Option<f64>,
    pub workers: Option<usize>,
    pub strict: bool,
}

impl Config {
    pub fn load(path: &Path, overrides: Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: Config = toml::from_str(&text)?;
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, overrides: Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(mu_cd) = overrides.mu_cd {
            self.sampler.mu_cd = mu_cd;
        }
        if let Some(beta) = overrides.beta {
            self.sampler.beta = beta;
        }
        if let Some(workers) = overrides.workers {
            self.workers = workers;
        }
        if overrides.strict {
            self.strict = true;
        }
    }

    pub fn endpoint(&self, name: &str) -> Result<ModelEndpoint, ConfigError> {
        self.endpoints
            .iter()
            .find(|e| e.name == name)
            .map(EndpointConfig::to_endpoint)
            .ok_or_else(|| ConfigError::Invalid(format!("no endpoint named `{name}`")))
    }

    pub fn teacher_endpoints(&self) -> Result<Vec<ModelEndpoint>, ConfigError> {
        if self.generation.teachers.is_empty() {
            return Err(ConfigError::Invalid("generation.teachers is empty".into()));
        }
        self.generation.teachers.iter().map(|n| self.endpoint(n)).collect()
    }

    /// The scoring judge; defaults to the first teacher when unset.
    pub fn scoring_judge(&self) -> Result<ModelEndpoint, ConfigError> {
        if self.scoring.judge.is_empty() {
            let first = self
                .generation
                .teachers
                .first()
                .ok_or_else(|| ConfigError::Invalid("no scoring judge configured".into()))?;
            self.endpoint(first)
        } else {
            self.endpoint(&self.scoring.judge)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers < 1 {
            return Err(ConfigError::Invalid("workers must be >= 1".into()));
        }
        for endpoint in &self.endpoints {
            endpoint
                .to_endpoint()
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        for source in &self.sources {
            source
                .to_spec()
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        match self.transport.kind.as_str() {
            "http" => {}
            "mock" => {
                if self.transport.script.is_none() {
                    return Err(ConfigError::Invalid(
                        "transport.kind = \"mock\" requires transport.script".into(),
                    ));
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!("unknown transport kind `{other}`")))
            }
        }
        if omni_core::tokenizer::by_name(&self.generation.tokenizer).is_none() {
            return Err(ConfigError::Invalid(format!(
                "unknown tokenizer `{}`",
                self.generation.tokenizer
            )));
        }
        if self.generation.per_teacher_count < 1 {
            return Err(ConfigError::Invalid("generation.per_teacher_count must be >= 1".into()));
        }
        for name in &self.generation.teachers {
            self.endpoint(name)?;
        }
        if !self.scoring.judge.is_empty() {
            self.endpoint(&self.scoring.judge)?;
        }
        if self.validation.judge != "cross" && !self.validation.judge.is_empty() {
            self.endpoint(&self.validation.judge)?;
        }
        self.scoring.to_scoring_config()?;
        let sampler = self.sampler_config();
        sampler.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mode = self.sampler.selection_mode()?;
        if let Some(mode) = mode {
            let need_rv = matches!(mode, SelectionMode::RvOptimal | SelectionMode::Combined);
            let need_cd = matches!(mode, SelectionMode::CdOptimal | SelectionMode::Combined);
            if need_rv && self.sampler.rv_range.is_none() {
                return Err(ConfigError::Invalid(format!(
                    "sampler strategy `{}` requires sampler.rv_range",
                    self.sampler.strategy
                )));
            }
            if need_cd && self.sampler.cd_range.is_none() {
                return Err(ConfigError::Invalid(format!(
                    "sampler strategy `{}` requires sampler.cd_range",
                    self.sampler.strategy
                )));
            }
        }
        if self.export.chosen_rv_range[0] > self.export.chosen_rv_range[1] {
            return Err(ConfigError::Invalid("export.chosen_rv_range is inverted".into()));
        }
        if let Some(filter) = &self.export.filter {
            Predicate::parse(filter).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        match self.stats.group_by.as_str() {
            "none" | "domain_tag" => {}
            other => {
                return Err(ConfigError::Invalid(format!("unknown stats.group_by `{other}`")))
            }
        }
        Ok(())
    }

    pub fn sampler_config(&self) -> omni_core::sampler::SamplerConfig {
        omni_core::sampler::SamplerConfig {
            mu_cd: self.sampler.mu_cd,
            beta: self.sampler.beta,
            samples_per_problem: self.sampler.samples_per_problem,
            seed: self.seed,
            candidate_filter: self.sampler.candidate_filter,
        }
    }
}
