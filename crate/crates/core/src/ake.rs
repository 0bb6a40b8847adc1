//! Automatic knowledge enrichment: seed questions → generated questions →
//! answers with confidence → single-sentence knowledge.
//!
//! The answer confidence is carried through to the knowledge entry unchanged.
//! One failing item never aborts a job; its error is recorded instead.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agents::{
    parse_confidence_answer, parse_knowledge_sentence, parse_question_list, AgentError,
    ConfidenceAnswer, PromptSet, TemplateName,
};
use crate::config::AkeSection;
use crate::knowledge_store::{check_confidence, KnowledgeBase, KnowledgeEntry, Source, StoreError};
use crate::llm_gateway::{CallFailure, Gateway, Message};

pub const JOBS_FILE: &str = "jobs.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum AkeError {
    #[error("m must be at least 1")]
    ZeroTarget,
    #[error("no seed questions given")]
    NoSeeds,
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("question generation stopped after {} question(s): {source}", partial.len())]
    Generation {
        #[source]
        source: CallFailure,
        partial: Vec<String>,
    },
    #[error(transparent)]
    Call(#[from] CallFailure),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("entry {id} is already {status:?}")]
    ReviewConflict { id: u64, status: ItemStatus },
    #[error("no produced entry {0} in this job")]
    UnknownEntry(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    PendingReview,
    AutoAccepted,
    /// Accepted by a reviewer (with either the proposed or verified confidence).
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewAction {
    /// Keep the proposed confidence.
    Approve,
    /// Human-verified: confidence becomes 1.0.
    ApproveVerified,
    Reject,
}

/// Knowledge proposed from one QA pair, before it gets an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingKnowledge {
    pub text: String,
    pub confidence: f64,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducedItem {
    pub entry: KnowledgeEntry,
    pub status: ItemStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub stage: String,
    pub item: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AkeJob {
    pub job_id: String,
    pub state: JobState,
    pub seeds: Vec<String>,
    pub m_target: usize,
    pub produced: Vec<ProducedItem>,
    pub errors: Vec<ItemError>,
    /// Items skipped because their text already exists.
    #[serde(default)]
    pub duplicates: usize,
}

impl AkeJob {
    pub fn new(job_id: impl Into<String>, seeds: Vec<String>, m_target: usize) -> Self {
        Self {
            job_id: job_id.into(),
            state: JobState::Pending,
            seeds,
            m_target,
            produced: Vec::new(),
            errors: Vec::new(),
            duplicates: 0,
        }
    }

    pub fn count(&self, status: ItemStatus) -> usize {
        self.produced.iter().filter(|p| p.status == status).count()
    }

    pub fn pending(&self) -> impl Iterator<Item = &ProducedItem> {
        self.produced.iter().filter(|p| p.status == ItemStatus::PendingReview)
    }

    pub fn has_item(&self, entry_id: u64) -> bool {
        self.produced.iter().any(|p| p.entry.id == entry_id)
    }

    /// Resolves a pending item. Approvals insert the entry into `kb`; a
    /// verified approval stores it as manual knowledge with confidence 1.0.
    pub fn review(
        &mut self,
        kb: &mut KnowledgeBase,
        entry_id: u64,
        action: ReviewAction,
    ) -> Result<Option<KnowledgeEntry>, AkeError> {
        let item = self
            .produced
            .iter_mut()
            .find(|p| p.entry.id == entry_id)
            .ok_or(AkeError::UnknownEntry(entry_id))?;
        if item.status != ItemStatus::PendingReview {
            return Err(AkeError::ReviewConflict {
                id: entry_id,
                status: item.status,
            });
        }
        let mut entry = item.entry.clone();
        let stored = match action {
            ReviewAction::Reject => None,
            ReviewAction::Approve | ReviewAction::ApproveVerified => {
                if action == ReviewAction::ApproveVerified {
                    entry.confidence = 1.0;
                    entry.source = Source::Manual;
                    entry.meta.insert("verified".into(), Value::Bool(true));
                }
                Some(kb.insert_entry(entry)?.clone())
            }
        };
        item.status = if stored.is_some() {
            ItemStatus::Approved
        } else {
            ItemStatus::Rejected
        };
        Ok(stored)
    }
}

/// Append-only job log under `jobs/`; the last record per job id wins.
#[derive(Debug, Clone)]
pub struct JobStore {
    dir: PathBuf,
}

impl JobStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn append(&self, job: &AkeJob) -> Result<(), AkeError> {
        fs::create_dir_all(&self.dir)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(JOBS_FILE))?;
        writeln!(f, "{}", serde_json::to_string(job).expect("job serializes"))?;
        Ok(())
    }

    pub fn load_all(&self) -> Result<BTreeMap<String, AkeJob>, AkeError> {
        let path = self.dir.join(JOBS_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
            Err(e) => return Err(e.into()),
        };
        let mut jobs = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let job: AkeJob = serde_json::from_str(line).map_err(|e| {
                StoreError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                }
            })?;
            jobs.insert(job.job_id.clone(), job);
        }
        Ok(jobs)
    }
}

/// The three enrichment agents sharing one gateway.
#[derive(Debug, Clone)]
pub struct Enricher {
    gateway: Arc<Gateway>,
    prompts: Arc<PromptSet>,
    settings: AkeSection,
}

fn ask(gateway: &Gateway, prompt: String) -> Result<String, CallFailure> {
    gateway.complete(&[Message::user(prompt)]).map(|c| c.text)
}

impl Enricher {
    pub fn new(gateway: Arc<Gateway>, prompts: Arc<PromptSet>, settings: AkeSection) -> Self {
        Self {
            gateway,
            prompts,
            settings,
        }
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    /// Up to `m` unique questions. Seeds whose reply does not parse are
    /// skipped and reported in the second tuple element.
    fn generate_detailed(
        &self,
        seeds: &[String],
        m: usize,
    ) -> (Vec<String>, Vec<ItemError>, Option<CallFailure>) {
        let mut out: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        let mut errors = Vec::new();
        for (i, seed) in seeds.iter().enumerate() {
            let remaining = m - out.len();
            if remaining == 0 {
                break;
            }
            let seeds_left = seeds.len() - i;
            let count = self.settings.fan_out.max(1).max(remaining.div_ceil(seeds_left));
            let slots = HashMap::from([("seed", seed.clone()), ("count", count.to_string())]);
            let prompt = match self.prompts.render(TemplateName::KnowledgeQ, &slots) {
                Ok(p) => p,
                Err(e) => {
                    errors.push(item_error("question", seed, &e));
                    continue;
                }
            };
            let reply = match ask(&self.gateway, prompt) {
                Ok(r) => r,
                Err(f) => return (out, errors, Some(f)),
            };
            match parse_question_list(&reply) {
                Ok(qs) => {
                    for q in qs {
                        if out.len() < m && seen.insert(q.clone()) {
                            out.push(q);
                        }
                    }
                }
                Err(e) => errors.push(item_error("question", seed, &e)),
            }
        }
        (out, errors, None)
    }

    pub fn generate_questions(&self, seeds: &[String], m: usize) -> Result<Vec<String>, AkeError> {
        if m == 0 {
            return Err(AkeError::ZeroTarget);
        }
        if seeds.is_empty() {
            return Err(AkeError::NoSeeds);
        }
        let (questions, errors, failure) = self.generate_detailed(seeds, m);
        for e in &errors {
            tracing::warn!(seed = %e.item, error = %e.message, "question generation skipped a seed");
        }
        match failure {
            Some(source) => Err(AkeError::Generation {
                source,
                partial: questions,
            }),
            None => Ok(questions),
        }
    }

    pub fn answer_with_confidence(&self, question: &str) -> Result<ConfidenceAnswer, AkeError> {
        if question.trim().is_empty() {
            return Err(AkeError::EmptyQuestion);
        }
        let slots = HashMap::from([("question", question.trim().to_string())]);
        let prompt = self.prompts.render(TemplateName::KnowledgeA, &slots)?;
        Ok(parse_confidence_answer(&ask(&self.gateway, prompt)?)?)
    }

    pub fn qa_pair_to_knowledge(
        &self,
        question: &str,
        answer: &str,
        confidence: f64,
    ) -> Result<PendingKnowledge, AkeError> {
        check_confidence(confidence)?;
        let slots = HashMap::from([
            ("question", question.trim().to_string()),
            ("answer", answer.trim().to_string()),
        ]);
        let prompt = self.prompts.render(TemplateName::Qa2knowledge, &slots)?;
        let text = parse_knowledge_sentence(&ask(&self.gateway, prompt)?)?;
        Ok(PendingKnowledge {
            text,
            confidence,
            question: question.trim().to_string(),
            answer: answer.trim().to_string(),
        })
    }

    fn knowledge_for(&self, question: &str) -> Result<PendingKnowledge, ItemError> {
        let a = self
            .answer_with_confidence(question)
            .map_err(|e| item_error("answer", question, &e))?;
        self.qa_pair_to_knowledge(question, &a.answer, a.confidence)
            .map_err(|e| item_error("knowledge", question, &e))
    }

    /// Runs all three stages and appends the results to `kb` (auto-accept)
    /// or parks them for review under reserved ids. Texts already in the KB
    /// or earlier in the job are skipped.
    pub fn enrich(
        &self,
        kb: &mut KnowledgeBase,
        job_id: &str,
        seeds: &[String],
        m: usize,
        auto_accept: bool,
    ) -> Result<AkeJob, AkeError> {
        if m == 0 {
            return Err(AkeError::ZeroTarget);
        }
        if seeds.is_empty() {
            return Err(AkeError::NoSeeds);
        }
        let mut job = AkeJob::new(job_id, seeds.to_vec(), m);
        job.state = JobState::Running;

        let (questions, gen_errors, failure) = self.generate_detailed(seeds, m);
        job.errors.extend(gen_errors);
        if let Some(f) = failure {
            job.errors.push(ItemError {
                stage: "question".into(),
                item: String::new(),
                message: f.to_string(),
            });
        }

        let results: Vec<Result<PendingKnowledge, ItemError>> = match rayon::ThreadPoolBuilder::new()
            .num_threads(self.settings.parallelism.max(1))
            .build()
        {
            Ok(pool) => pool.install(|| questions.par_iter().map(|q| self.knowledge_for(q)).collect()),
            Err(_) => questions.iter().map(|q| self.knowledge_for(q)).collect(),
        };

        let mut seen: HashSet<String> = HashSet::new();
        for result in results {
            let pending = match result {
                Ok(p) => p,
                Err(e) => {
                    job.errors.push(e);
                    continue;
                }
            };
            if kb.contains_text(&pending.text) || !seen.insert(pending.text.clone()) {
                job.duplicates += 1;
                continue;
            }
            let mut meta = Map::new();
            meta.insert("job_id".into(), Value::String(job_id.to_string()));
            meta.insert("question".into(), Value::String(pending.question));
            meta.insert("answer".into(), Value::String(pending.answer));
            let id = kb.reserve_id();
            let entry = kb.stamp_entry(id, &pending.text, pending.confidence, Source::Ake, meta);
            let status = if auto_accept {
                kb.insert_entry(entry.clone())?;
                ItemStatus::AutoAccepted
            } else {
                ItemStatus::PendingReview
            };
            job.produced.push(ProducedItem { entry, status });
        }

        // Duplicates count as successful items: a rerun that finds nothing new is done.
        job.state = if job.produced.is_empty() && job.duplicates == 0 && !job.errors.is_empty() {
            JobState::Failed
        } else {
            JobState::Done
        };
        Ok(job)
    }
}

fn item_error(stage: &str, item: &str, e: &dyn std::fmt::Display) -> ItemError {
    ItemError {
        stage: stage.into(),
        item: item.into(),
        message: e.to_string(),
    }
}

/// Seeds from a plain-text file (one per line) or a dataset JSONL file.
pub fn read_seeds(path: &Path) -> std::io::Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            serde_json::from_str::<Value>(l)
                .ok()
                .and_then(|v| v.get("question").and_then(Value::as_str).map(str::to_string))
                .unwrap_or_else(|| l.to_string())
        })
        .collect())
}
