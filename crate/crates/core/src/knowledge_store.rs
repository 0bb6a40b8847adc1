//! Structured knowledge base of single-fact entries with confidence values.
//!
//! Entries are persisted as canonical JSONL (`kb.jsonl`), one record per line
//! with a fixed key order so exports are byte-stable. Deletion is soft: a
//! tombstone flag in `meta` keeps ids referenced by old reports resolvable.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const KB_FILE: &str = "kb.jsonl";
pub const MAX_FACT_CHARS: usize = 500;
/// Corpus fragments with fewer whitespace tokens than this are dropped.
pub const MIN_CORPUS_TOKENS: usize = 3;

const META_DELETED: &str = "deleted";
const META_DELETED_AT: &str = "deleted_at";
const META_UPDATED_AT: &str = "updated_at";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid knowledge text: {0}")]
    Validation(String),
    #[error("confidence {0} outside [0, 1]")]
    Range(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate knowledge id {0}")]
    DuplicateId(u64),
    #[error("no knowledge entry with id {0}")]
    NotFound(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Manual,
    Ake,
    Corpus,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Manual => "manual",
            Source::Ake => "ake",
            Source::Corpus => "corpus",
        })
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manual" => Ok(Source::Manual),
            "ake" => Ok(Source::Ake),
            "corpus" => Ok(Source::Corpus),
            other => Err(format!("unknown source '{other}'")),
        }
    }
}

/// One verified or pseudo fact. Field order is the canonical JSONL key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeEntry {
    pub id: u64,
    pub text: String,
    pub confidence: f64,
    pub source: Source,
    pub created_at: String,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

impl KnowledgeEntry {
    pub fn is_tombstoned(&self) -> bool {
        matches!(self.meta.get(META_DELETED), Some(Value::Bool(true)))
    }

    /// Quarantined entries (confidence 0) stay in the KB but are never retrieved.
    pub fn is_quarantined(&self) -> bool {
        self.confidence <= 0.0
    }

    pub fn is_retrievable(&self) -> bool {
        !self.is_tombstoned() && !self.is_quarantined()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImportMode {
    /// Canonical KB records, loaded verbatim.
    KbJsonl,
    /// Plain text split into sentences, each stored with the given confidence.
    CorpusText { confidence: f64 },
}

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct KnowledgeBase {
    entries: Vec<KnowledgeEntry>,
    positions: HashMap<u64, usize>,
    next_id: u64,
    embedder_id: String,
    clock: Clock,
}

impl fmt::Debug for KnowledgeBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnowledgeBase")
            .field("entries", &self.entries.len())
            .field("next_id", &self.next_id)
            .field("embedder_id", &self.embedder_id)
            .finish()
    }
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        Self::new("")
    }
}

pub fn check_confidence(confidence: f64) -> Result<(), StoreError> {
    if (0.0..=1.0).contains(&confidence) {
        Ok(())
    } else {
        Err(StoreError::Range(confidence))
    }
}

/// Syntactic single-fact check: non-empty, at most [`MAX_FACT_CHARS`]
/// characters and at most one sentence-terminal mark.
///
/// A terminal mark is a run of `.`, `!` or `?` followed by whitespace or the
/// end of the text, so decimals like `3.14` do not count.
pub fn validate_fact(text: &str) -> Result<(), StoreError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(StoreError::Validation("text is empty".into()));
    }
    let chars = text.chars().count();
    if chars > MAX_FACT_CHARS {
        return Err(StoreError::Validation(format!(
            "text has {chars} characters, limit is {MAX_FACT_CHARS}"
        )));
    }
    let marks = terminal_mark_ends(text).len();
    if marks > 1 {
        return Err(StoreError::Validation(format!(
            "text holds {marks} sentences, expected one fact"
        )));
    }
    Ok(())
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Byte offsets just past each terminal mark run.
fn terminal_mark_ends(text: &str) -> Vec<usize> {
    let mut ends = Vec::new();
    for (i, c) in text.char_indices() {
        if !is_terminal(c) {
            continue;
        }
        let end = i + c.len_utf8();
        if text[end..].chars().next().is_none_or(char::is_whitespace) {
            ends.push(end);
        }
    }
    ends
}

/// Splits plain text into trimmed sentences, dropping short fragments.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut push = |piece: &str| {
        let piece = piece.trim();
        if piece.split_whitespace().count() >= MIN_CORPUS_TOKENS {
            out.push(piece.to_string());
        }
    };
    for end in terminal_mark_ends(text) {
        push(&text[start..end]);
        start = end;
    }
    push(&text[start..]);
    out
}

fn system_clock() -> Clock {
    Arc::new(Utc::now)
}

fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_err(line: usize, message: impl Into<String>) -> StoreError {
    StoreError::Parse {
        line,
        message: message.into(),
    }
}

impl KnowledgeBase {
    pub fn new(embedder_id: impl Into<String>) -> Self {
        Self {
            entries: Vec::new(),
            positions: HashMap::new(),
            next_id: 1,
            embedder_id: embedder_id.into(),
            clock: system_clock(),
        }
    }

    /// Replaces the timestamp source; tests pin it for byte-stable output.
    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_fixed_clock(self, ts: DateTime<Utc>) -> Self {
        self.with_clock(Arc::new(move || ts))
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn set_embedder_id(&mut self, id: impl Into<String>) {
        self.embedder_id = id.into();
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// All entries in insertion order, tombstones included.
    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn active_entries(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.entries.iter().filter(|e| !e.is_tombstoned())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&KnowledgeEntry> {
        self.positions.get(&id).map(|&i| &self.entries[i])
    }

    fn get_mut(&mut self, id: u64) -> Result<&mut KnowledgeEntry, StoreError> {
        let i = *self.positions.get(&id).ok_or(StoreError::NotFound(id))?;
        Ok(&mut self.entries[i])
    }

    /// Exact-text membership among live entries.
    pub fn contains_text(&self, text: &str) -> bool {
        let text = text.trim();
        self.active_entries().any(|e| e.text == text)
    }

    fn now(&self) -> String {
        format_timestamp((self.clock)())
    }

    /// Allocates an id without storing anything (pending review items).
    pub fn reserve_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Keeps ids up to `id` reserved, e.g. for review items parked in a job log.
    pub fn reserve_through(&mut self, id: u64) {
        self.next_id = self.next_id.max(id + 1);
    }

    /// Adds a new validated entry under a fresh id. `verified` marks the
    /// human-verified path: the entry becomes `manual` with confidence 1.0.
    pub fn upsert_entry(
        &mut self,
        text: &str,
        confidence: f64,
        source: Source,
        verified: bool,
    ) -> Result<&KnowledgeEntry, StoreError> {
        validate_fact(text)?;
        check_confidence(confidence)?;
        let (confidence, source) = if verified {
            (1.0, Source::Manual)
        } else {
            (confidence, source)
        };
        let id = self.reserve_id();
        let entry = KnowledgeEntry {
            id,
            text: text.trim().to_string(),
            confidence,
            source,
            created_at: self.now(),
            meta: Map::new(),
        };
        self.push(entry)
    }

    /// Stores a fully formed entry, keeping its id.
    pub fn insert_entry(&mut self, entry: KnowledgeEntry) -> Result<&KnowledgeEntry, StoreError> {
        check_confidence(entry.confidence)?;
        if entry.text.trim().is_empty() {
            return Err(StoreError::Validation("text is empty".into()));
        }
        if self.positions.contains_key(&entry.id) {
            return Err(StoreError::DuplicateId(entry.id));
        }
        self.next_id = self.next_id.max(entry.id + 1);
        self.push(entry)
    }

    fn push(&mut self, entry: KnowledgeEntry) -> Result<&KnowledgeEntry, StoreError> {
        let pos = self.entries.len();
        self.positions.insert(entry.id, pos);
        self.entries.push(entry);
        Ok(&self.entries[pos])
    }

    /// Entry with a freshly stamped `created_at`, ready for [`Self::insert_entry`].
    pub fn stamp_entry(
        &self,
        id: u64,
        text: &str,
        confidence: f64,
        source: Source,
        meta: Map<String, Value>,
    ) -> KnowledgeEntry {
        KnowledgeEntry {
            id,
            text: text.trim().to_string(),
            confidence,
            source,
            created_at: self.now(),
            meta,
        }
    }

    pub fn set_confidence(&mut self, id: u64, confidence: f64) -> Result<&KnowledgeEntry, StoreError> {
        check_confidence(confidence)?;
        let now = self.now();
        let entry = self.get_mut(id)?;
        entry.confidence = confidence;
        entry.meta.insert(META_UPDATED_AT.into(), Value::String(now));
        Ok(entry)
    }

    pub fn update_text(&mut self, id: u64, text: &str) -> Result<&KnowledgeEntry, StoreError> {
        validate_fact(text)?;
        let now = self.now();
        let entry = self.get_mut(id)?;
        entry.text = text.trim().to_string();
        entry.meta.insert(META_UPDATED_AT.into(), Value::String(now));
        Ok(entry)
    }

    /// Soft delete.
    pub fn delete(&mut self, id: u64) -> Result<&KnowledgeEntry, StoreError> {
        let now = self.now();
        let entry = self.get_mut(id)?;
        entry.meta.insert(META_DELETED.into(), Value::Bool(true));
        entry.meta.insert(META_DELETED_AT.into(), Value::String(now));
        Ok(entry)
    }

    pub fn import(&mut self, path: &Path, mode: ImportMode) -> Result<usize, StoreError> {
        let content = fs::read_to_string(path)?;
        self.import_str(&content, mode)
    }

    /// Imports from in-memory content. On error nothing is added.
    pub fn import_str(&mut self, content: &str, mode: ImportMode) -> Result<usize, StoreError> {
        match mode {
            ImportMode::KbJsonl => {
                let parsed = parse_kb_jsonl(content)?;
                for e in &parsed {
                    if self.positions.contains_key(&e.id) {
                        return Err(StoreError::DuplicateId(e.id));
                    }
                }
                let n = parsed.len();
                for e in parsed {
                    self.insert_entry(e)?;
                }
                Ok(n)
            }
            ImportMode::CorpusText { confidence } => {
                check_confidence(confidence)?;
                let mut n = 0;
                for sentence in split_sentences(content) {
                    if validate_fact(&sentence).is_err() {
                        tracing::debug!(len = sentence.len(), "skipping overlong corpus sentence");
                        continue;
                    }
                    self.upsert_entry(&sentence, confidence, Source::Corpus, false)?;
                    n += 1;
                }
                Ok(n)
            }
        }
    }

    /// Canonical JSONL, one record per line, LF terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn export(&self, path: &Path) -> Result<usize, StoreError> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())?;
        file.sync_all()?;
        Ok(self.entries.len())
    }

    /// Loads `dir/kb.jsonl`; a missing file yields an empty KB.
    pub fn load_dir(dir: &Path, embedder_id: impl Into<String>) -> Result<Self, StoreError> {
        let mut kb = Self::new(embedder_id);
        let path = dir.join(KB_FILE);
        if path.exists() {
            kb.import(&path, ImportMode::KbJsonl)?;
        }
        Ok(kb)
    }

    /// Writes `dir/kb.jsonl` through a temp file and rename.
    pub fn save_dir(&self, dir: &Path) -> Result<usize, StoreError> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{KB_FILE}.tmp"));
        let n = self.export(&tmp)?;
        fs::rename(&tmp, dir.join(KB_FILE))?;
        Ok(n)
    }
}

/// Parses canonical KB records, checking ids, confidences and timestamps.
pub fn parse_kb_jsonl(content: &str) -> Result<Vec<KnowledgeEntry>, StoreError> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let entry: KnowledgeEntry =
            serde_json::from_str(line).map_err(|e| parse_err(line_no, e.to_string()))?;
        if entry.text.trim().is_empty() {
            return Err(parse_err(line_no, "empty text"));
        }
        if !(0.0..=1.0).contains(&entry.confidence) {
            return Err(parse_err(
                line_no,
                format!("confidence {} outside [0, 1]", entry.confidence),
            ));
        }
        DateTime::parse_from_rfc3339(&entry.created_at)
            .map_err(|e| parse_err(line_no, format!("created_at: {e}")))?;
        if seen.insert(entry.id, line_no).is_some() {
            return Err(StoreError::DuplicateId(entry.id));
        }
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn fixed_kb() -> KnowledgeBase {
        KnowledgeBase::new("hash-fnv-splitmix-64")
            .with_fixed_clock(Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap())
    }

    #[test]
    fn verified_entry_has_full_confidence() {
        let mut kb = fixed_kb();
        let e = kb
            .upsert_entry("The sun appears white when viewed from space.", 0.3, Source::Ake, true)
            .unwrap();
        assert_eq!(e.confidence, 1.0);
        assert_eq!(e.source, Source::Manual);
        assert_eq!(e.id, 1);
    }

    #[test]
    fn unverified_entry_keeps_confidence() {
        let mut kb = fixed_kb();
        let e = kb
            .upsert_entry(
                "A trait that makes humans unique is their ability to communicate through complex language.",
                0.8,
                Source::Ake,
                false,
            )
            .unwrap();
        assert_eq!(e.confidence, 0.8);
        assert_eq!(e.source, Source::Ake);
    }

    #[test]
    fn rejects_bad_text_and_range() {
        let mut kb = fixed_kb();
        assert!(matches!(
            kb.upsert_entry("", 0.5, Source::Manual, false),
            Err(StoreError::Validation(_))
        ));
        assert!(matches!(
            kb.upsert_entry("   ", 0.5, Source::Manual, false),
            Err(StoreError::Validation(_))
        ));
        assert!(matches!(
            kb.upsert_entry("A is B. C is D.", 0.5, Source::Manual, false),
            Err(StoreError::Validation(_))
        ));
        let long = "a".repeat(MAX_FACT_CHARS + 1);
        assert!(matches!(
            kb.upsert_entry(&long, 0.5, Source::Manual, false),
            Err(StoreError::Validation(_))
        ));
        assert!(matches!(
            kb.upsert_entry("Fine fact.", 1.2, Source::Manual, false),
            Err(StoreError::Range(_))
        ));
        assert!(kb.is_empty());
    }

    #[test]
    fn validator_ignores_inner_punctuation() {
        validate_fact("Pi is roughly 3.14159.").unwrap();
        validate_fact("Is it true?").unwrap();
        validate_fact("Wait... really").unwrap();
        validate_fact("No terminal mark").unwrap();
        assert!(validate_fact("Stop! Go!").is_err());
    }

    #[test]
    fn corpus_split() {
        assert_eq!(split_sentences("A is B. C is D."), vec!["A is B.", "C is D."]);
        assert_eq!(
            split_sentences("Too short. This one is long enough!  Tail without end"),
            vec!["This one is long enough!", "Tail without end"]
        );
        let mut kb = fixed_kb();
        let n = kb
            .import_str("A is B. C is D.", ImportMode::CorpusText { confidence: 0.7 })
            .unwrap();
        assert_eq!(n, 2);
        assert!(kb.entries().iter().all(|e| e.source == Source::Corpus && e.confidence == 0.7));
    }

    #[test]
    fn set_confidence_paths() {
        let mut kb = fixed_kb();
        let content = concat!(
            r#"{"id":4,"text":"The city that is cloudy literally all the time is Lima, Peru.","confidence":0.9,"source":"ake","created_at":"2026-01-01T00:00:00Z","meta":{}}"#,
            "\n"
        );
        kb.import_str(content, ImportMode::KbJsonl).unwrap();
        assert_eq!(kb.set_confidence(4, 1.0).unwrap().confidence, 1.0);
        assert_eq!(kb.set_confidence(4, 0.9).unwrap().confidence, 0.9);
        assert_eq!(kb.set_confidence(4, 0.9).unwrap().confidence, 0.9);
        assert!(kb.get(4).unwrap().meta.contains_key("updated_at"));
        assert!(matches!(kb.set_confidence(4, -0.1), Err(StoreError::Range(_))));
        assert!(matches!(
            KnowledgeBase::default().set_confidence(999, 0.5),
            Err(StoreError::NotFound(999))
        ));
        assert_eq!(kb.next_id(), 5);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = |id: u64| {
            format!(
                r#"{{"id":{id},"text":"Fact {id} holds.","confidence":1.0,"source":"manual","created_at":"2026-01-01T00:00:00Z","meta":{{}}}}"#
            )
        };
        let content = format!("{}\n{}\n", line(3), line(3));
        let mut kb = fixed_kb();
        assert!(matches!(
            kb.import_str(&content, ImportMode::KbJsonl),
            Err(StoreError::DuplicateId(3))
        ));
        assert!(kb.is_empty());

        kb.import_str(&format!("{}\n", line(3)), ImportMode::KbJsonl).unwrap();
        assert!(matches!(
            kb.import_str(&format!("{}\n", line(3)), ImportMode::KbJsonl),
            Err(StoreError::DuplicateId(3))
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let content = "\n{\"id\":1}\n";
        match parse_kb_jsonl(content) {
            Err(StoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_conf = r#"{"id":1,"text":"x","confidence":1.5,"source":"manual","created_at":"2026-01-01T00:00:00Z","meta":{}}"#;
        assert!(matches!(parse_kb_jsonl(bad_conf), Err(StoreError::Parse { line: 1, .. })));
        let bad_ts = r#"{"id":1,"text":"x","confidence":1.0,"source":"manual","created_at":"yesterday","meta":{}}"#;
        assert!(matches!(parse_kb_jsonl(bad_ts), Err(StoreError::Parse { line: 1, .. })));
    }

    #[test]
    fn soft_delete_keeps_entry_resolvable() {
        let mut kb = fixed_kb();
        let id = kb.upsert_entry("Water boils at 100 C at sea level.", 1.0, Source::Manual, false).unwrap().id;
        kb.delete(id).unwrap();
        let e = kb.get(id).unwrap();
        assert!(e.is_tombstoned());
        assert!(!e.is_retrievable());
        assert_eq!(kb.active_entries().count(), 0);
        assert!(!kb.contains_text("Water boils at 100 C at sea level."));
    }

    #[test]
    fn export_empty_and_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        assert_eq!(fixed_kb().export(&path).unwrap(), 0);
        assert_eq!(fs::read_to_string(&path).unwrap(), "");

        let mut kb = fixed_kb();
        for t in ["Alpha is first.", "Beta is second.", "Gamma is third."] {
            kb.upsert_entry(t, 0.5, Source::Manual, false).unwrap();
        }
        assert_eq!(kb.export(&path).unwrap(), 3);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(r#"{"id":1,"text":"Alpha is first.","confidence":0.5,"source":"manual","created_at":"2026-01-01T00:00:00Z","meta":{}}"#));
        let mut back = fixed_kb();
        back.import(&path, ImportMode::KbJsonl).unwrap();
        assert_eq!(back.entries(), kb.entries());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Add(String, f64, bool),
        SetConf(u64, f64),
        Delete(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            ("[a-z]{1,8}( [a-z]{1,8}){0,4}\\.?", -0.5f64..1.5, any::<bool>())
                .prop_map(|(t, c, v)| Op::Add(t, c, v)),
            (0u64..40, -0.5f64..1.5).prop_map(|(id, c)| Op::SetConf(id, c)),
            (0u64..40).prop_map(Op::Delete),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn invariants_hold_under_random_ops(ops in prop::collection::vec(op(), 1000..1200)) {
            let mut kb = fixed_kb();
            for op in ops {
                let _ = match op {
                    Op::Add(t, c, v) => kb.upsert_entry(&t, c, Source::Ake, v).map(|_| ()),
                    Op::SetConf(id, c) => kb.set_confidence(id, c).map(|_| ()),
                    Op::Delete(id) => kb.delete(id).map(|_| ()),
                };
            }
            let mut ids: Vec<u64> = kb.entries().iter().map(|e| e.id).collect();
            let n = ids.len();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            prop_assert!(ids.iter().all(|&id| id < kb.next_id()));
            prop_assert!(kb.entries().iter().all(|e| (0.0..=1.0).contains(&e.confidence)));
        }

        #[test]
        fn export_is_a_fixpoint(
            facts in prop::collection::vec(("[A-Za-z0-9 ,']{1,60}\\.", 0.0f64..=1.0), 0..30)
        ) {
            let mut kb = fixed_kb();
            for (t, c) in &facts {
                let _ = kb.upsert_entry(t, *c, Source::Manual, false);
            }
            let first = kb.to_jsonl();
            let mut back = fixed_kb();
            back.import_str(&first, ImportMode::KbJsonl).unwrap();
            prop_assert_eq!(back.entries(), kb.entries());
            prop_assert_eq!(back.to_jsonl(), first);
        }

        #[test]
        fn corpus_sentences_are_a_subsequence(text in "[A-Za-z .!?\n]{0,300}") {
            let normalize = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
            let source = normalize(&text);
            let joined = normalize(&split_sentences(&text).join(" "));
            let mut it = source.chars();
            prop_assert!(joined.chars().all(|c| it.any(|s| s == c)));
        }
    }
}
