//! Prompt templates with `{slot}` markers and strict parsers for each agent's
//! line-oriented output.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::knowledge_store::{validate_fact, StoreError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("missing prompt slot '{0}'")]
    MissingSlot(String),
    #[error("unparseable agent output: {0}")]
    Parse(String),
    #[error("confidence {0} outside [0, 1]")]
    Range(f64),
    #[error("invalid knowledge sentence: {0}")]
    Validation(String),
    #[error("cannot read prompt template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    MainQa,
    KnowledgeQ,
    KnowledgeA,
    Qa2knowledge,
    Mc1Wrap,
    Mc2Wrap,
}

impl TemplateName {
    pub const ALL: [TemplateName; 6] = [
        TemplateName::MainQa,
        TemplateName::KnowledgeQ,
        TemplateName::KnowledgeA,
        TemplateName::Qa2knowledge,
        TemplateName::Mc1Wrap,
        TemplateName::Mc2Wrap,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateName::MainQa => "main_qa",
            TemplateName::KnowledgeQ => "knowledge_q",
            TemplateName::KnowledgeA => "knowledge_a",
            TemplateName::Qa2knowledge => "qa2knowledge",
            TemplateName::Mc1Wrap => "mc1_wrap",
            TemplateName::Mc2Wrap => "mc2_wrap",
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            TemplateName::MainQa => MAIN_QA,
            TemplateName::KnowledgeQ => KNOWLEDGE_Q,
            TemplateName::KnowledgeA => KNOWLEDGE_A,
            TemplateName::Qa2knowledge => QA2KNOWLEDGE,
            TemplateName::Mc1Wrap => MC1_WRAP,
            TemplateName::Mc2Wrap => MC2_WRAP,
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

const MAIN_QA: &str = "\
You answer questions using ONLY the knowledge listed below. Never use your own internal knowledge, even if you believe you know the answer. Each knowledge line shows its id and a confidence value between 0 and 1.

Knowledge:
{knowledge}

Question:
{question}

First judge whether the listed knowledge is sufficient to answer the question. Then reply in exactly this format:
ANSWERABLE: YES or NO
EVIDENCE: [ids of the knowledge lines you rely on, comma separated]
{reasoning_instruction}ANSWER: <final answer>
If the knowledge is not sufficient, reply with the single line ANSWERABLE: NO";

const REASONING_INSTRUCTION: &str =
    "REASONING: <step-by-step reasoning from the evidence to the answer>\n";

const KNOWLEDGE_Q: &str = "\
Write {count} new factual questions on the same topic as the seed question below. Each question must ask about exactly one fact.

Seed question: {seed}

Reply with a numbered list, one question per line:
1. <question>";

const KNOWLEDGE_A: &str = "\
Answer the question below as accurately as you can, then state how confident you are that the answer is correct, as a number between 0 and 1.

Question: {question}

Reply in exactly this format:
ANSWER: <answer>
CONFIDENCE: <number between 0 and 1>";

const QA2KNOWLEDGE: &str = "\
Rewrite the question and answer pair below as one declarative sentence that states a single fact and can be understood without the question.

Question: {question}
Answer: {answer}

Reply in exactly this format:
KNOWLEDGE: <one sentence>";

const MC1_WRAP: &str = "\
{question}

Options:
{options}

Exactly one option is correct. The ANSWER line must contain only the letter of that option, for example \"ANSWER: A\".";

const MC2_WRAP: &str = "\
{question}

Options:
{options}

Any number of options may be correct. After the ANSWER: line, write exactly {option_count} lines, one per option in order ({letters}), each of the form \"OPTION <letter>: TRUE\" or \"OPTION <letter>: FALSE\".";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
}

/// Parses `{slot}` markers; braces around anything else are literal.
fn scan(body: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(n) if is_slot_name(n) => {
                pieces.push(Piece::Text(&rest[..open]));
                pieces.push(Piece::Slot(n));
                rest = &after[n.len() + 1..];
            }
            _ => {
                pieces.push(Piece::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    pieces.push(Piece::Text(rest));
    pieces
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Self {
        Self {
            name,
            body: body.into(),
        }
    }

    pub fn default_for(name: TemplateName) -> Self {
        Self::new(name, name.default_body())
    }

    pub fn slots(&self) -> Vec<&str> {
        scan(&self.body)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// Fills every slot. Values are inserted verbatim and never re-scanned.
    pub fn render(&self, slots: &HashMap<&str, String>) -> Result<String, AgentError> {
        let mut out = String::with_capacity(self.body.len());
        for piece in scan(&self.body) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(
                    slots
                        .get(s)
                        .ok_or_else(|| AgentError::MissingSlot(s.to_string()))?,
                ),
            }
        }
        Ok(out)
    }
}

pub fn render_prompt(
    template: &PromptTemplate,
    slots: &HashMap<&str, String>,
) -> Result<String, AgentError> {
    template.render(slots)
}

/// The full template set, defaults overridable from `prompts/<name>.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            templates: TemplateName::ALL
                .iter()
                .map(|&n| (n, PromptTemplate::default_for(n)))
                .collect(),
        }
    }
}

impl PromptSet {
    /// Defaults, replaced by any `<name>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, AgentError> {
        let mut set = Self::default();
        for name in TemplateName::ALL {
            let path = dir.join(format!("{}.txt", name.file_stem()));
            match std::fs::read_to_string(&path) {
                Ok(body) => set.set(PromptTemplate::new(name, body)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => {
                    return Err(AgentError::Io {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(set)
    }

    /// Writes every template to `dir/<name>.txt`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in self.templates.values() {
            std::fs::write(dir.join(format!("{}.txt", t.name.file_stem())), &t.body)?;
        }
        Ok(())
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.name, template);
    }

    pub fn render(
        &self,
        name: TemplateName,
        slots: &HashMap<&str, String>,
    ) -> Result<String, AgentError> {
        self.get(name).render(slots)
    }
}

/// Value for the `{reasoning_instruction}` slot of `main_qa`.
pub fn reasoning_instruction(step_by_step: bool) -> String {
    if step_by_step {
        REASONING_INSTRUCTION.to_string()
    } else {
        String::new()
    }
}

/// One knowledge line as shown to the main QA agent.
pub fn knowledge_line(id: u64, text: &str, confidence: f64) -> String {
    format!("[{id}] {text} (confidence={confidence:?})")
}

pub fn option_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainQAOutput {
    pub answerable: bool,
    pub evidence_ids: Vec<u64>,
    pub reasoning: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceAnswer {
    pub answer: String,
    pub confidence: f64,
}

/// Splits output into `KEY: value` sections for the given keys. Keys match
/// case-insensitively at the start of a line; lines without a known key
/// continue the current section. Text before the first key is ignored.
fn sections<'a>(text: &str, keys: &[&'a str]) -> Result<HashMap<&'a str, String>, AgentError> {
    let mut out: HashMap<&str, String> = HashMap::new();
    let mut current: Option<&str> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        let key = trimmed.split_once(':').and_then(|(k, v)| {
            let k = k.trim();
            keys.iter()
                .find(|key| key.eq_ignore_ascii_case(k))
                .map(|&key| (key, v))
        });
        match key {
            Some((k, v)) => {
                if out.contains_key(k) {
                    return Err(AgentError::Parse(format!("duplicate {k} line")));
                }
                out.insert(k, v.trim().to_string());
                current = Some(k);
            }
            None => {
                if let Some(k) = current {
                    let body = out.get_mut(k).expect("current section exists");
                    body.push('\n');
                    body.push_str(line);
                }
            }
        }
    }
    for v in out.values_mut() {
        *v = v.trim().to_string();
    }
    Ok(out)
}

fn parse_yes_no(value: &str) -> Result<bool, AgentError> {
    let v = value.trim().trim_end_matches('.');
    if v.eq_ignore_ascii_case("yes") {
        Ok(true)
    } else if v.eq_ignore_ascii_case("no") {
        Ok(false)
    } else {
        Err(AgentError::Parse(format!("ANSWERABLE must be YES or NO, got '{value}'")))
    }
}

fn parse_ids(value: &str) -> Result<Vec<u64>, AgentError> {
    let cleaned: String = value.chars().filter(|c| *c != '[' && *c != ']').collect();
    if cleaned.trim().eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for tok in cleaned.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let id = tok
            .parse()
            .map_err(|_| AgentError::Parse(format!("bad evidence id '{tok}'")))?;
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    Ok(ids)
}

/// Parses the main QA layout:
///
/// ```text
/// ANSWERABLE: YES|NO
/// EVIDENCE: [id, id, ...]
/// REASONING: <multi-line until ANSWER:>
/// ANSWER: <text>
/// ```
pub fn parse_main_qa_output(text: &str) -> Result<MainQAOutput, AgentError> {
    let s = sections(text, &["ANSWERABLE", "EVIDENCE", "REASONING", "ANSWER"])?;
    let answerable = parse_yes_no(
        s.get("ANSWERABLE")
            .ok_or_else(|| AgentError::Parse("missing ANSWERABLE line".into()))?,
    )?;
    let evidence_ids = s.get("EVIDENCE").map(|v| parse_ids(v)).transpose()?.unwrap_or_default();
    let answer = s.get("ANSWER").cloned().unwrap_or_default();
    if answerable && answer.is_empty() {
        return Err(AgentError::Parse("ANSWERABLE: YES without an ANSWER".into()));
    }
    Ok(MainQAOutput {
        answerable,
        evidence_ids,
        reasoning: s.get("REASONING").cloned().unwrap_or_default(),
        answer,
    })
}

/// Parses `ANSWER: <text>` / `CONFIDENCE: <decimal>`. Out-of-range
/// confidences are rejected, never clamped.
pub fn parse_confidence_answer(text: &str) -> Result<ConfidenceAnswer, AgentError> {
    let s = sections(text, &["ANSWER", "CONFIDENCE"])?;
    let answer = s
        .get("ANSWER")
        .filter(|a| !a.is_empty())
        .ok_or_else(|| AgentError::Parse("missing ANSWER line".into()))?
        .clone();
    let raw = s
        .get("CONFIDENCE")
        .ok_or_else(|| AgentError::Parse("missing CONFIDENCE line".into()))?;
    let confidence: f64 = raw
        .parse()
        .ok()
        .filter(|c: &f64| c.is_finite())
        .ok_or_else(|| AgentError::Parse(format!("bad confidence '{raw}'")))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(AgentError::Range(confidence));
    }
    Ok(ConfidenceAnswer { answer, confidence })
}

/// Parses `1. <q>` lines (also `1)`), dropping empties and exact duplicates.
pub fn parse_question_list(text: &str) -> Result<Vec<String>, AgentError> {
    let mut found = false;
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        let digits = line.bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            continue;
        }
        let rest = &line[digits..];
        let Some(q) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) else {
            continue;
        };
        found = true;
        let q = q.trim();
        if !q.is_empty() && !out.iter().any(|x| x == q) {
            out.push(q.to_string());
        }
    }
    if found {
        Ok(out)
    } else {
        Err(AgentError::Parse("no numbered lines found".into()))
    }
}

/// Parses `KNOWLEDGE: <single sentence>` and applies the single-fact check.
pub fn parse_knowledge_sentence(text: &str) -> Result<String, AgentError> {
    let s = sections(text, &["KNOWLEDGE"])?;
    let sentence = s
        .get("KNOWLEDGE")
        .filter(|k| !k.is_empty())
        .ok_or_else(|| AgentError::Parse("missing KNOWLEDGE line".into()))?
        .replace('\n', " ");
    validate_fact(&sentence).map_err(|e| match e {
        StoreError::Validation(m) => AgentError::Validation(m),
        other => AgentError::Validation(other.to_string()),
    })?;
    Ok(sentence)
}
