//! Dataset loading, MC1/MC2 scoring, refusal metrics, offline threshold
//! sweeps and the gold-knowledge ratio experiment.
//!
//! Accuracy is measured over answered questions only. MC1 scores one unit per
//! question; MC2 scores one unit per option label. Pipeline errors count as
//! soft refusals with an error flag so the refusal breakdown always
//! partitions the dataset.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::knowledge_store::{KnowledgeBase, Source, StoreError};
use crate::pipeline::{
    parse_mc1_choice, parse_mc2_labels, response_jsonl_line, PipelineError, QAResponse,
    RefusalCause, Status, Task,
};
use crate::pipeline::Pipeline;
use crate::retrieval::{EmbeddingCache, Embedder, RetrievalError, VectorIndex};

pub const SWEEP_CSV_HEADER: &str = "alpha,answered,refused,accuracy,precision,recall";
pub const RATIO_CSV_HEADER: &str = "ratio,kb_size,answered,accuracy";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("no forced-mode cache; run a forced pass first")]
    MissingCache,
    #[error("question {0} has no gold knowledge")]
    MissingGoldKnowledge(String),
    #[error("ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub task: Task,
    pub question: String,
    pub choices: Vec<String>,
    pub gold: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_knowledge: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.task == Task::Open {
            return Err("task must be mc1 or mc2".into());
        }
        if self.choices.len() < 2 {
            return Err(format!("needs at least 2 choices, got {}", self.choices.len()));
        }
        if self.gold.is_empty() {
            return Err("gold is empty".into());
        }
        if let Some(&g) = self.gold.iter().find(|&&g| g >= self.choices.len()) {
            return Err(format!("gold index {g} out of range for {} choices", self.choices.len()));
        }
        if self.task == Task::Mc1 && self.gold.len() != 1 {
            return Err(format!("mc1 needs exactly one gold index, got {}", self.gold.len()));
        }
        Ok(())
    }

    pub fn units(&self) -> usize {
        match self.task {
            Task::Mc2 => self.choices.len(),
            _ => 1,
        }
    }
}

pub fn parse_dataset(content: &str) -> Result<Vec<DatasetRecord>, EvalError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let schema = |message: String| EvalError::Schema {
            line: line_no,
            message,
        };
        record.validate().map_err(schema)?;
        if !ids.insert(record.id.clone()) {
            return Err(schema(format!("duplicate id '{}'", record.id)));
        }
        out.push(record);
    }
    Ok(out)
}

/// Validates in-memory records the same way [`parse_dataset`] does;
/// `line` in errors is the 1-based record position.
pub fn check_dataset(records: &[DatasetRecord]) -> Result<(), EvalError> {
    let mut ids = HashSet::new();
    for (i, r) in records.iter().enumerate() {
        let schema = |message: String| EvalError::Schema { line: i + 1, message };
        r.validate().map_err(schema)?;
        if !ids.insert(r.id.as_str()) {
            return Err(schema(format!("duplicate id '{}'", r.id)));
        }
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, EvalError> {
    parse_dataset(&fs::read_to_string(path)?)
}

/// Correct units out of the record's units for a model answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Score {
    pub correct: usize,
    pub units: usize,
}

impl Score {
    pub fn is_fully_correct(&self) -> bool {
        self.units > 0 && self.correct == self.units
    }
}

pub fn score_answer(record: &DatasetRecord, answer: &str) -> Score {
    let n = record.choices.len();
    match record.task {
        Task::Mc2 => {
            let labels = parse_mc2_labels(answer, n);
            let correct = labels
                .iter()
                .enumerate()
                .filter(|(i, l)| **l == Some(record.gold.contains(i)))
                .count();
            Score { correct, units: n }
        }
        _ => {
            let hit = parse_mc1_choice(answer, n).is_some_and(|c| record.gold.contains(&c));
            Score {
                correct: usize::from(hit),
                units: 1,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub id: String,
    pub task: Task,
    pub status: Status,
    pub refusal_cause: Option<RefusalCause>,
    pub answer: String,
    pub score: Score,
    /// `None` means +inf (nothing eligible retrieved) or not computed.
    pub min_score: Option<f64>,
    pub i_soft: bool,
    pub i_hard: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_ref: Option<u64>,
}

impl QuestionOutcome {
    pub fn from_result(record: &DatasetRecord, result: &Result<QAResponse, PipelineError>) -> Self {
        match result {
            Ok(r) => Self {
                id: record.id.clone(),
                task: record.task,
                status: r.status,
                refusal_cause: r.refusal_cause,
                answer: r.answer.clone(),
                score: if r.is_answered() {
                    score_answer(record, &r.answer)
                } else {
                    Score {
                        correct: 0,
                        units: record.units(),
                    }
                },
                min_score: finite(r.judgment.min_penalized_score),
                i_soft: r.judgment.i_soft,
                i_hard: r.judgment.i_hard,
                error: None,
                audit_ref: None,
            },
            Err(e) => Self {
                id: record.id.clone(),
                task: record.task,
                status: Status::Refused,
                refusal_cause: Some(RefusalCause::Soft),
                answer: String::new(),
                score: Score {
                    correct: 0,
                    units: record.units(),
                },
                min_score: None,
                i_soft: false,
                i_hard: false,
                error: Some(e.to_string()),
                audit_ref: e.audit_ref(),
            },
        }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub answered: usize,
    pub refusals_hard: usize,
    pub refusals_soft: usize,
    /// Pipeline failures, already included in `refusals_soft`.
    pub errors: usize,
    /// Correct units over answered questions.
    pub correct: usize,
    pub answered_units: usize,
    pub accuracy: f64,
    /// False when nothing was answered; `accuracy` is then 0.
    pub accuracy_defined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    pub per_question: Vec<QuestionOutcome>,
}

impl EvalReport {
    pub fn from_outcomes(per_question: Vec<QuestionOutcome>) -> Self {
        let answered_q: Vec<&QuestionOutcome> = per_question
            .iter()
            .filter(|o| o.status == Status::Answered)
            .collect();
        let answered = answered_q.len();
        let correct = answered_q.iter().map(|o| o.score.correct).sum();
        let answered_units = answered_q.iter().map(|o| o.score.units).sum();
        let cause = |c| {
            per_question
                .iter()
                .filter(|o| o.refusal_cause == Some(c))
                .count()
        };
        Self {
            total: per_question.len(),
            answered,
            refusals_hard: cause(RefusalCause::Hard),
            refusals_soft: cause(RefusalCause::Soft),
            errors: per_question.iter().filter(|o| o.error.is_some()).count(),
            correct,
            answered_units,
            accuracy: ratio(correct, answered_units),
            accuracy_defined: answered_units > 0,
            success_rate: None,
            per_question,
        }
    }

    pub fn partition_holds(&self) -> bool {
        self.answered + self.refusals_hard + self.refusals_soft == self.total
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Runs `f` over the items on a pool of `parallelism` threads, keeping order.
fn par_map<T: Sync, R: Send>(items: &[T], parallelism: usize, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if parallelism <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

pub fn answer_batch(
    pipeline: &Pipeline,
    dataset: &[DatasetRecord],
    forced: bool,
    parallelism: usize,
) -> Vec<Result<QAResponse, PipelineError>> {
    par_map(dataset, parallelism, |r| {
        if forced {
            pipeline.forced_answer(&r.question, Some(r.choices.as_slice()), r.task)
        } else {
            pipeline.answer_question(&r.question, Some(r.choices.as_slice()), r.task)
        }
    })
}

/// Full evaluation plus the per-question response JSONL lines (errors omitted).
pub fn evaluate(
    dataset: &[DatasetRecord],
    pipeline: &Pipeline,
    parallelism: usize,
) -> (EvalReport, Vec<String>) {
    let results = answer_batch(pipeline, dataset, false, parallelism);
    let lines = dataset
        .iter()
        .zip(&results)
        .filter_map(|(rec, r)| r.as_ref().ok().map(|r| response_jsonl_line(&rec.id, r)))
        .collect();
    let outcomes = dataset
        .iter()
        .zip(&results)
        .map(|(rec, r)| QuestionOutcome::from_result(rec, r))
        .collect();
    (EvalReport::from_outcomes(outcomes), lines)
}

pub fn run_eval(dataset: &[DatasetRecord], pipeline: &Pipeline, parallelism: usize) -> EvalReport {
    evaluate(dataset, pipeline, parallelism).0
}

/// What one question would have scored with both gates bypassed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedRecord {
    pub id: String,
    /// `None` is +inf.
    pub min_score: Option<f64>,
    pub i_soft: bool,
    pub score: Score,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ForcedRecord {
    pub fn min_score_value(&self) -> f64 {
        self.min_score.unwrap_or(f64::INFINITY)
    }

    pub fn would_be_incorrect(&self) -> bool {
        !self.score.is_fully_correct()
    }

    /// The hard gate at `alpha` combined with the cached soft judgment.
    pub fn answered_at(&self, alpha: f64) -> bool {
        self.i_soft && self.min_score_value() < alpha
    }
}

/// Forced-mode results, persisted as JSONL so sweeps replay without calls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForcedCache {
    pub records: Vec<ForcedRecord>,
}

impl ForcedCache {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(EvalError::MissingCache),
            Err(e) => return Err(e.into()),
        };
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            records.push(serde_json::from_str(line).map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { records })
    }

    pub fn get(&self, id: &str) -> Option<&ForcedRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// One forced-mode pass over the dataset.
pub fn forced_pass(dataset: &[DatasetRecord], pipeline: &Pipeline, parallelism: usize) -> ForcedCache {
    let results = answer_batch(pipeline, dataset, true, parallelism);
    let records = dataset
        .iter()
        .zip(results)
        .map(|(rec, r)| match r {
            Ok(r) => ForcedRecord {
                id: rec.id.clone(),
                min_score: finite(r.judgment.min_penalized_score),
                i_soft: r.judgment.i_soft,
                score: score_answer(rec, &r.answer),
                error: None,
            },
            Err(e) => ForcedRecord {
                id: rec.id.clone(),
                min_score: None,
                i_soft: false,
                score: Score {
                    correct: 0,
                    units: rec.units(),
                },
                error: Some(e.to_string()),
            },
        })
        .collect();
    ForcedCache { records }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessRate {
    pub refused: usize,
    pub would_be_incorrect: usize,
    /// `None` when nothing was refused.
    pub rate: Option<f64>,
}

/// Share of refused questions whose forced answer would have been wrong.
/// A refused question missing from the cache counts as wrong.
pub fn refusal_success_rate(report: &EvalReport, cache: &ForcedCache) -> SuccessRate {
    let by_id: HashMap<&str, &ForcedRecord> =
        cache.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let refused: Vec<&QuestionOutcome> = report
        .per_question
        .iter()
        .filter(|o| o.status == Status::Refused)
        .collect();
    let wrong = refused
        .iter()
        .filter(|o| by_id.get(o.id.as_str()).is_none_or(|r| r.would_be_incorrect()))
        .count();
    SuccessRate {
        refused: refused.len(),
        would_be_incorrect: wrong,
        rate: (!refused.is_empty()).then(|| wrong as f64 / refused.len() as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub answered: usize,
    pub refused: usize,
    /// Correct units among answered questions.
    pub correct: usize,
    pub answered_units: usize,
    pub total_units: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Replays the forced cache at each threshold; no provider calls.
pub fn sweep_alpha(cache: &ForcedCache, alphas: &[f64]) -> Vec<SweepPoint> {
    let total_units: usize = cache.records.iter().map(|r| r.score.units).sum();
    alphas
        .iter()
        .map(|&alpha| {
            let answered: Vec<&ForcedRecord> =
                cache.records.iter().filter(|r| r.answered_at(alpha)).collect();
            let correct = answered.iter().map(|r| r.score.correct).sum();
            let answered_units = answered.iter().map(|r| r.score.units).sum();
            let accuracy = ratio(correct, answered_units);
            SweepPoint {
                alpha,
                answered: answered.len(),
                refused: cache.records.len() - answered.len(),
                correct,
                answered_units,
                total_units,
                accuracy,
                precision: accuracy,
                recall: ratio(correct, total_units),
            }
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            p.alpha, p.answered, p.refused, p.accuracy, p.precision, p.recall
        );
    }
    out
}

/// Parses `0.25,0.5,inf`.
pub fn parse_alphas(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v: f64 = t.parse().map_err(|_| format!("bad alpha '{t}'"))?;
            if v.is_nan() || v < 0.0 {
                Err(format!("alpha must be >= 0, got '{t}'"))
            } else {
                Ok(v)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub ratio: f64,
    pub kb_size: usize,
    pub answered: usize,
    pub correct: usize,
    pub accuracy: f64,
}

pub fn ratio_csv(rows: &[RatioRow]) -> String {
    let mut out = String::from(RATIO_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.6}", r.ratio, r.kb_size, r.answered, r.accuracy);
    }
    out
}

/// Gold knowledge of the first `floor(ratio * n)` questions at confidence 1.0.
pub fn gold_kb(dataset: &[DatasetRecord], ratio: f64) -> Result<KnowledgeBase, EvalError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    let take = (ratio * dataset.len() as f64).floor() as usize;
    let mut kb = KnowledgeBase::default();
    for rec in &dataset[..take] {
        let gold = rec
            .gold_knowledge
            .as_ref()
            .ok_or_else(|| EvalError::MissingGoldKnowledge(rec.id.clone()))?;
        for text in gold {
            let text = text.trim();
            if text.is_empty() || kb.contains_text(text) {
                continue;
            }
            let id = kb.reserve_id();
            let entry = kb.stamp_entry(id, text, 1.0, Source::Manual, Default::default());
            kb.insert_entry(entry)?;
        }
    }
    Ok(kb)
}

/// For each ratio, rebuilds the KB from gold knowledge and evaluates.
/// `make_pipeline` wires the fresh index to the caller's gateway and settings.
pub fn gold_ratio_experiment(
    dataset: &[DatasetRecord],
    ratios: &[f64],
    embedder: Arc<dyn Embedder>,
    make_pipeline: impl Fn(Arc<VectorIndex<f64>>) -> Pipeline,
    parallelism: usize,
) -> Result<Vec<RatioRow>, EvalError> {
    if dataset.iter().all(|r| r.gold_knowledge.is_none()) {
        return Err(EvalError::MissingGoldKnowledge("<dataset>".into()));
    }
    let mut cache = EmbeddingCache::new(embedder.dim());
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let kb = gold_kb(dataset, ratio)?;
        let (index, _) = VectorIndex::build(&kb, embedder.clone(), &mut cache)?;
        let report = run_eval(dataset, &make_pipeline(Arc::new(index)), parallelism);
        rows.push(RatioRow {
            ratio,
            kb_size: kb.len(),
            answered: report.answered,
            correct: report.correct,
            accuracy: report.accuracy,
        });
    }
    Ok(rows)
}
