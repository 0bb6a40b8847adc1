//! One question end to end: retrieve, hard gate, a single main-QA call that
//! carries the soft judgment, then response assembly.
//!
//! The hard gate runs before the model: a hard-refused question never reaches
//! the provider. Forced mode runs the same flow but always answers, keeping
//! the judgment for offline threshold sweeps.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{
    knowledge_line, option_letter, parse_main_qa_output, reasoning_instruction, AgentError,
    PromptSet, TemplateName,
};
use crate::config::AnswerSettings;
use crate::llm_gateway::{CallFailure, Gateway, Message};
use crate::refusal::{combine, HardPolicy, JudgePolicy, Judgment};
use crate::retrieval::{RetrievalError, RetrievalSet, VectorIndex};

pub const MAX_CHOICES: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Open,
    Mc1,
    Mc2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Answered,
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefusalCause {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub id: u64,
    pub text: String,
    pub confidence: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QAResponse {
    pub status: Status,
    pub refusal_cause: Option<RefusalCause>,
    pub evidence: Vec<Evidence>,
    pub reasoning: String,
    pub answer: String,
    pub judgment: Judgment<f64>,
    pub retrieval: RetrievalSet<f64>,
}

impl QAResponse {
    pub fn is_answered(&self) -> bool {
        self.status == Status::Answered
    }
}

#[derive(Serialize, Deserialize)]
struct HitRecord {
    id: u64,
    confidence: f64,
    distance: f64,
}

/// One JSONL line per question:
/// `{id, status, refusal_cause, evidence, reasoning, answer, judgment, retrieval}`.
#[derive(Serialize)]
struct ResponseRecord<'a> {
    id: &'a str,
    status: Status,
    refusal_cause: Option<RefusalCause>,
    evidence: &'a [Evidence],
    reasoning: &'a str,
    answer: &'a str,
    judgment: &'a Judgment<f64>,
    retrieval: Vec<HitRecord>,
}

pub fn response_json(id: &str, r: &QAResponse) -> serde_json::Value {
    serde_json::to_value(record(id, r)).expect("response serializes")
}

fn record<'a>(id: &'a str, r: &'a QAResponse) -> ResponseRecord<'a> {
    ResponseRecord {
        id,
        status: r.status,
        refusal_cause: r.refusal_cause,
        evidence: &r.evidence,
        reasoning: &r.reasoning,
        answer: &r.answer,
        judgment: &r.judgment,
        retrieval: r
            .retrieval
            .hits
            .iter()
            .map(|h| HitRecord {
                id: h.entry_id,
                confidence: h.confidence,
                distance: h.distance,
            })
            .collect(),
    }
}

pub fn response_jsonl_line(id: &str, r: &QAResponse) -> String {
    serde_json::to_string(&record(id, r)).expect("response serializes")
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("{task:?} needs at least 2 choices, got {got}")]
    TooFewChoices { task: Task, got: usize },
    #[error("at most {MAX_CHOICES} choices are supported, got {0}")]
    TooManyChoices(usize),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("prompt rendering failed: {0}")]
    Prompt(AgentError),
    #[error("could not use model output of call #{call_index}: {message}")]
    Parse {
        message: String,
        raw: String,
        call_index: u64,
    },
    #[error(transparent)]
    Gateway(#[from] CallFailure),
}

impl PipelineError {
    /// Audit log index of the provider call behind this error, if any.
    pub fn audit_ref(&self) -> Option<u64> {
        match self {
            PipelineError::Parse { call_index, .. } => Some(*call_index),
            PipelineError::Gateway(f) => Some(f.call_index),
            _ => None,
        }
    }

    pub fn is_provider_failure(&self) -> bool {
        matches!(self, PipelineError::Gateway(_))
    }
}

/// Renders the multiple-choice block that replaces the question slot.
pub fn format_mc_prompt(
    prompts: &PromptSet,
    question: &str,
    choices: &[String],
    task: Task,
) -> Result<String, PipelineError> {
    let template = match task {
        Task::Mc1 => TemplateName::Mc1Wrap,
        Task::Mc2 => TemplateName::Mc2Wrap,
        Task::Open => return Ok(question.to_string()),
    };
    if choices.len() < 2 {
        return Err(PipelineError::TooFewChoices {
            task,
            got: choices.len(),
        });
    }
    if choices.len() > MAX_CHOICES {
        return Err(PipelineError::TooManyChoices(choices.len()));
    }
    let options = choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}", option_letter(i)))
        .collect::<Vec<_>>()
        .join("\n");
    let letters = (0..choices.len())
        .map(|i| option_letter(i).to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let slots = HashMap::from([
        ("question", question.to_string()),
        ("options", options),
        ("option_count", choices.len().to_string()),
        ("letters", letters),
    ]);
    prompts.render(template, &slots).map_err(PipelineError::Prompt)
}

/// Option index chosen in an MC1 answer such as `B`, `B.`, `(B)` or `B. text`.
pub fn parse_mc1_choice(answer: &str, n_choices: usize) -> Option<usize> {
    let a = answer.trim().trim_start_matches(['(', '[']);
    let mut chars = a.chars();
    let letter = chars.next()?.to_ascii_uppercase();
    if !letter.is_ascii_uppercase() || chars.next().is_some_and(|c| c.is_alphanumeric()) {
        return None;
    }
    let idx = (letter as u8 - b'A') as usize;
    (idx < n_choices).then_some(idx)
}

/// Per-option labels from `OPTION <letter>: TRUE|FALSE` lines; options the
/// answer does not label (or labels twice) are `None`.
pub fn parse_mc2_labels(answer: &str, n_choices: usize) -> Vec<Option<bool>> {
    let mut labels: Vec<Option<bool>> = vec![None; n_choices];
    let mut seen = vec![0u8; n_choices];
    for line in answer.lines() {
        let Some((key, value)) = line.trim().split_once(':') else {
            continue;
        };
        let mut words = key.split_whitespace();
        if !words.next().is_some_and(|w| w.eq_ignore_ascii_case("option")) {
            continue;
        }
        let Some(idx) = words.next().and_then(|l| parse_mc1_choice(l, n_choices)) else {
            continue;
        };
        let v = value.trim().trim_end_matches('.');
        let label = if v.eq_ignore_ascii_case("true") {
            true
        } else if v.eq_ignore_ascii_case("false") {
            false
        } else {
            continue;
        };
        seen[idx] += 1;
        labels[idx] = (seen[idx] == 1).then_some(label);
    }
    labels
}

/// Answers questions against one index snapshot.
#[derive(Clone)]
pub struct Pipeline {
    index: Arc<VectorIndex<f64>>,
    gateway: Arc<Gateway>,
    prompts: Arc<PromptSet>,
    settings: AnswerSettings,
    judge: Option<Arc<dyn JudgePolicy<f64>>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("index", &self.index)
            .field("settings", &self.settings)
            .finish()
    }
}

impl Pipeline {
    pub fn new(
        index: Arc<VectorIndex<f64>>,
        gateway: Arc<Gateway>,
        prompts: Arc<PromptSet>,
        settings: AnswerSettings,
    ) -> Self {
        Self {
            index,
            gateway,
            prompts,
            settings,
            judge: None,
        }
    }

    /// Replaces the threshold gate with a custom judge.
    pub fn with_judge(mut self, judge: Arc<dyn JudgePolicy<f64>>) -> Self {
        self.judge = Some(judge);
        self
    }

    /// Same pipeline with different knobs (per-request overrides).
    pub fn with_settings(&self, settings: AnswerSettings) -> Self {
        Self {
            settings,
            ..self.clone()
        }
    }

    pub fn settings(&self) -> &AnswerSettings {
        &self.settings
    }

    pub fn index(&self) -> &Arc<VectorIndex<f64>> {
        &self.index
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn answer_question(
        &self,
        question: &str,
        choices: Option<&[String]>,
        task: Task,
    ) -> Result<QAResponse, PipelineError> {
        self.run(question, choices, task, false)
    }

    /// Both gates bypassed for the decision; the judgment is still recorded.
    pub fn forced_answer(
        &self,
        question: &str,
        choices: Option<&[String]>,
        task: Task,
    ) -> Result<QAResponse, PipelineError> {
        self.run(question, choices, task, true)
    }

    fn hard_gate(&self, retrieval: &RetrievalSet<f64>) -> (bool, f64, f64) {
        if !self.settings.hard_enabled {
            let (pass, score) = HardPolicy::<f64>::open().judge(&retrieval.hits);
            return (pass, score, f64::INFINITY);
        }
        match &self.judge {
            Some(j) => {
                let (pass, score) = j.judge(&retrieval.hits);
                (pass, score, j.threshold())
            }
            None => {
                let policy = HardPolicy::new(self.settings.alpha)
                    .unwrap_or_default();
                let (pass, score) = policy.judge(&retrieval.hits);
                (pass, score, policy.alpha())
            }
        }
    }

    fn run(
        &self,
        question: &str,
        choices: Option<&[String]>,
        task: Task,
        forced: bool,
    ) -> Result<QAResponse, PipelineError> {
        let question = question.trim();
        if question.is_empty() {
            return Err(PipelineError::EmptyQuestion);
        }
        let choices = choices.unwrap_or(&[]);
        let question_block = format_mc_prompt(&self.prompts, question, choices, task)?;

        let retrieval = self.index.retrieve_top_k(question, self.settings.k)?;
        let (i_hard, score, alpha_used) = self.hard_gate(&retrieval);

        if !i_hard && !forced {
            return Ok(QAResponse {
                status: Status::Refused,
                refusal_cause: Some(RefusalCause::Hard),
                evidence: Vec::new(),
                reasoning: String::new(),
                answer: String::new(),
                judgment: Judgment::new(false, false, score, alpha_used),
                retrieval,
            });
        }

        let knowledge = retrieval
            .hits
            .iter()
            .filter_map(|h| {
                self.index
                    .entry(h.entry_id)
                    .map(|e| knowledge_line(e.id, &e.text, e.confidence))
            })
            .collect::<Vec<_>>()
            .join("\n");
        let slots = HashMap::from([
            ("knowledge", knowledge),
            ("question", question_block),
            (
                "reasoning_instruction",
                reasoning_instruction(self.settings.step_by_step),
            ),
        ]);
        let prompt = self
            .prompts
            .render(TemplateName::MainQa, &slots)
            .map_err(PipelineError::Prompt)?;
        let completion = self.gateway.complete(&[Message::user(prompt)])?;
        let parse_failure = |message: String| PipelineError::Parse {
            message,
            raw: completion.text.clone(),
            call_index: completion.call_index,
        };
        let output = parse_main_qa_output(&completion.text).map_err(|e| parse_failure(e.to_string()))?;

        let mut evidence = Vec::with_capacity(output.evidence_ids.len());
        for id in &output.evidence_ids {
            let hit = retrieval
                .hits
                .iter()
                .find(|h| h.entry_id == *id)
                .ok_or_else(|| parse_failure(format!("cited knowledge id {id} was not retrieved")))?;
            let text = self
                .index
                .entry(*id)
                .map(|e| e.text.clone())
                .unwrap_or_default();
            evidence.push(Evidence {
                id: *id,
                text,
                confidence: hit.confidence,
                distance: hit.distance,
            });
        }

        let i_soft = output.answerable || !self.settings.soft_enabled;
        let judgment = Judgment::new(i_soft, i_hard, score, alpha_used);
        debug_assert_eq!(judgment.i_final, combine(i_soft, i_hard));

        if !i_soft && !forced {
            return Ok(QAResponse {
                status: Status::Refused,
                refusal_cause: Some(RefusalCause::Soft),
                evidence: Vec::new(),
                reasoning: String::new(),
                answer: String::new(),
                judgment,
                retrieval,
            });
        }

        Ok(QAResponse {
            status: Status::Answered,
            refusal_cause: None,
            evidence,
            reasoning: if self.settings.step_by_step {
                output.reasoning
            } else {
                String::new()
            },
            answer: output.answer,
            judgment,
            retrieval,
        })
    }
}
