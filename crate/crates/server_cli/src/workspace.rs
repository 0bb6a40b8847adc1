//! Everything loaded from a project directory: config, knowledge base,
//! embedding cache, prompts and job log.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};

use l2r_core::agents::PromptSet;
use l2r_core::ake::{AkeJob, JobState, JobStore};
use l2r_core::config::{Config, EmbedderKind, ProviderKind};
use l2r_core::knowledge_store::KnowledgeBase;
use l2r_core::llm_gateway::{ChatProvider, Gateway, MockProvider, OpenAiProvider};
use l2r_core::pipeline::Pipeline;
use l2r_core::retrieval::{
    BuildStats, Embedder, EmbeddingCache, HashEmbedder, RemoteEmbedder, VectorIndex, CACHE_FILE,
};
use l2r_core::AnswerSettings;

pub const CONFIG_FILE: &str = "l2r.toml";
pub const AUDIT_FILE: &str = "audit.jsonl";

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub k: Option<usize>,
    /// `openai` or `mock:<script.json>`.
    pub provider: Option<String>,
}

pub struct Workspace {
    pub config: Config,
    pub embedder: Arc<dyn Embedder>,
    pub prompts: Arc<PromptSet>,
    pub kb: KnowledgeBase,
    pub cache: EmbeddingCache,
}

impl std::fmt::Debug for Workspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workspace")
            .field("kb_dir", &self.config.paths.kb_dir)
            .field("entries", &self.kb.len())
            .finish()
    }
}

/// Loads `path`, or `./l2r.toml` when present, or defaults rooted at `.`.
pub fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<Config> {
    let (mut config, base) = match path {
        Some(p) => (Config::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None if Path::new(CONFIG_FILE).exists() => (Config::load(Path::new(CONFIG_FILE))?, PathBuf::new()),
        None => (Config::default(), PathBuf::new()),
    };
    if let Some(a) = ov.alpha {
        config.refusal.alpha = a;
    }
    if let Some(k) = ov.k {
        config.retrieval.k = k;
    }
    if let Some(p) = &ov.provider {
        if p == "openai" {
            config.provider.kind = ProviderKind::Openai;
        } else if let Some(script) = p.strip_prefix("mock:") {
            config.provider.kind = ProviderKind::Mock;
            config.provider.mock_script = Some(PathBuf::from(script));
        } else {
            bail!("unknown provider '{p}' (expected openai or mock:<script.json>)");
        }
    }
    config.validate()?;
    // Paths in the file are relative to the file; the script from the flag
    // is relative to the working directory.
    let flag_script = ov.provider.as_ref().and(config.provider.mock_script.take());
    config.resolve_paths(&base);
    if flag_script.is_some() {
        config.provider.mock_script = flag_script;
    }
    Ok(config)
}

pub fn embedder_for(config: &Config) -> Result<Arc<dyn Embedder>> {
    let e = &config.embedder;
    Ok(match e.kind {
        EmbedderKind::Hash => Arc::new(HashEmbedder::new(e.dim)),
        EmbedderKind::Openai => Arc::new(RemoteEmbedder::new(
            &e.endpoint,
            &e.model,
            &e.api_key_env,
            e.dim,
            e.timeout_ms,
        )?),
    })
}

pub fn provider_for(config: &Config) -> Result<Arc<dyn ChatProvider>> {
    Ok(match config.provider.kind {
        ProviderKind::Openai => Arc::new(OpenAiProvider::new(config.provider.settings.clone())?),
        ProviderKind::Mock => {
            let script = config
                .provider
                .mock_script
                .as_ref()
                .ok_or_else(|| anyhow!("provider.kind = \"mock\" needs provider.mock_script"))?;
            Arc::new(MockProvider::from_script_file(script)?)
        }
    })
}

impl Workspace {
    pub fn open(config: Config) -> Result<Self> {
        let embedder = embedder_for(&config)?;
        let prompts_dir = &config.paths.prompts_dir;
        let prompts = if prompts_dir.is_dir() {
            PromptSet::load_dir(prompts_dir)?
        } else {
            PromptSet::default()
        };
        let kb_dir = &config.paths.kb_dir;
        let mut kb = KnowledgeBase::load_dir(kb_dir, embedder.id())
            .with_context(|| format!("loading {}", kb_dir.display()))?;
        let cache = EmbeddingCache::load_or_empty(&kb_dir.join(CACHE_FILE), embedder.dim());
        for job in JobStore::new(&config.paths.jobs_dir).load_all()?.values() {
            for item in job.pending() {
                kb.reserve_through(item.entry.id);
            }
        }
        Ok(Self {
            config,
            embedder,
            prompts: Arc::new(prompts),
            kb,
            cache,
        })
    }

    pub fn kb_dir(&self) -> &Path {
        &self.config.paths.kb_dir
    }

    pub fn job_store(&self) -> JobStore {
        JobStore::new(&self.config.paths.jobs_dir)
    }

    /// Jobs from the log. Jobs left running by a previous process are failed.
    pub fn load_jobs(&self) -> Result<Vec<AkeJob>> {
        Ok(self
            .job_store()
            .load_all()?
            .into_values()
            .map(|mut j| {
                if matches!(j.state, JobState::Pending | JobState::Running) {
                    j.state = JobState::Failed;
                }
                j
            })
            .collect())
    }

    pub fn gateway(&self) -> Result<Arc<Gateway>> {
        let gw = Gateway::new(provider_for(&self.config)?).with_audit_file(self.kb_dir().join(AUDIT_FILE));
        Ok(Arc::new(gw))
    }

    pub fn settings(&self) -> AnswerSettings {
        self.config.answer_settings()
    }

    /// Rebuilds the index from the KB, refreshing the embedding cache.
    pub fn build_index(&mut self) -> Result<(VectorIndex<f64>, BuildStats)> {
        Ok(VectorIndex::build(&self.kb, self.embedder.clone(), &mut self.cache)?)
    }

    pub fn pipeline(&mut self, gateway: Arc<Gateway>) -> Result<Pipeline> {
        let (index, _) = self.build_index()?;
        self.save_cache()?;
        Ok(Pipeline::new(Arc::new(index), gateway, self.prompts.clone(), self.settings()))
    }

    pub fn save_cache(&self) -> Result<()> {
        std::fs::create_dir_all(self.kb_dir())?;
        self.cache.save(&self.kb_dir().join(CACHE_FILE))?;
        Ok(())
    }

    /// Writes the KB and a cache matching it.
    pub fn save(&mut self) -> Result<()> {
        self.kb.save_dir(self.kb_dir())?;
        self.build_index()?;
        self.save_cache()
    }
}
