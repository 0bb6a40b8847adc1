//! TOML configuration: `[provider]`, `[embedder]`, `[retrieval]`,
//! `[refusal]`, `[answer]`, `[ake]`, `[server]` and `[paths]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llm_gateway::{ProviderConfig, DEFAULT_API_KEY_ENV};
use crate::refusal::DEFAULT_ALPHA;
use crate::retrieval::{DEFAULT_K, TEST_EMBEDDER_DIM};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Openai,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    /// JSON mock script used when `kind = "mock"`.
    pub mock_script: Option<PathBuf>,
    #[serde(flatten)]
    pub settings: ProviderConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    /// Deterministic FNV-1a/splitmix64 hashing embedder.
    #[default]
    Hash,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSection {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_ms: u64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dim: TEST_EMBEDDER_DIM,
            endpoint: "https://api.openai.com/v1".into(),
            model: "text-embedding-ada-002".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefusalSection {
    pub alpha: f64,
    pub soft_enabled: bool,
    pub hard_enabled: bool,
}

impl Default for RefusalSection {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            soft_enabled: true,
            hard_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerSection {
    pub step_by_step: bool,
    /// Questions evaluated concurrently in batch runs.
    pub parallelism: usize,
}

impl Default for AnswerSection {
    fn default() -> Self {
        Self {
            step_by_step: true,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AkeSection {
    /// Questions requested per seed.
    pub fan_out: usize,
    pub parallelism: usize,
    pub auto_accept: bool,
}

impl Default for AkeSection {
    fn default() -> Self {
        Self {
            fan_out: 1,
            parallelism: 4,
            auto_accept: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    pub cors_allowlist: Vec<String>,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            cors_allowlist: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub kb_dir: PathBuf,
    pub prompts_dir: PathBuf,
    pub jobs_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            kb_dir: "kb".into(),
            prompts_dir: "prompts".into(),
            jobs_dir: "jobs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub provider: ProviderSection,
    pub embedder: EmbedderSection,
    pub retrieval: RetrievalSection,
    pub refusal: RefusalSection,
    pub answer: AnswerSection,
    pub ake: AkeSection,
    pub server: ServerSection,
    pub paths: PathsSection,
}

/// The per-question knobs, also exposed as `GET/PUT /v1/config`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerSettings {
    pub alpha: f64,
    pub k: usize,
    pub soft_enabled: bool,
    pub hard_enabled: bool,
    pub step_by_step: bool,
}

impl Default for AnswerSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            k: DEFAULT_K,
            soft_enabled: true,
            hard_enabled: true,
            step_by_step: true,
        }
    }
}

impl AnswerSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0) {
            return Err(ConfigError::Invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be >= 1".into()));
        }
        Ok(())
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.answer_settings().validate()?;
        self.provider
            .settings
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.embedder.dim == 0 {
            return Err(ConfigError::Invalid("embedder.dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn answer_settings(&self) -> AnswerSettings {
        AnswerSettings {
            alpha: self.refusal.alpha,
            k: self.retrieval.k,
            soft_enabled: self.refusal.soft_enabled,
            hard_enabled: self.refusal.hard_enabled,
            step_by_step: self.answer.step_by_step,
        }
    }

    pub fn apply_settings(&mut self, s: &AnswerSettings) {
        self.refusal.alpha = s.alpha;
        self.retrieval.k = s.k;
        self.refusal.soft_enabled = s.soft_enabled;
        self.refusal.hard_enabled = s.hard_enabled;
        self.answer.step_by_step = s.step_by_step;
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.kb_dir,
            &mut self.paths.prompts_dir,
            &mut self.paths.jobs_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(script) = &mut self.provider.mock_script {
            if script.is_relative() {
                *script = base.join(&*script);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
