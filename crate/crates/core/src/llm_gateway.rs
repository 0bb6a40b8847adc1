//! Chat-completion gateway: an OpenAI-compatible HTTP client, a scripted
//! mock provider and the audited [`Gateway`] wrapper every agent goes through.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_API_KEY_ENV: &str = "L2R_API_KEY";
const BACKOFF_BASE_MS: u64 = 500;

#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider rejected request with status {status}: {body}")]
    ProviderRejection { status: u16, body: String },
    #[error("no scripted reply for prompt {hash}")]
    UnscriptedPrompt { hash: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("invalid provider config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Text the mock matches on: message contents joined by a blank line. A
/// single-message request matches on exactly that message.
pub fn prompt_text(messages: &[Message]) -> String {
    messages
        .iter()
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Lowercase hex SHA-256 of [`prompt_text`].
pub fn prompt_hash(messages: &[Message]) -> String {
    hash_prompt(&prompt_text(messages))
}

pub fn hash_prompt(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, messages: &[Message]) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Token-bucket limit on remote calls; 0 disables limiting.
    pub requests_per_minute: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo-0613".into(),
            temperature: 0.0,
            top_p: 1.0,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_ms: 60_000,
            max_retries: 3,
            requests_per_minute: 0,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    top_p: f64,
    messages: &'a [Message],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// Extracts `choices[0].message.content` from a chat-completions body.
pub fn parse_chat_response(body: &str) -> Result<String, GatewayError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| GatewayError::Malformed("no choices[0].message.content".into()))
}

pub fn request_body(config: &ProviderConfig, messages: &[Message]) -> serde_json::Value {
    serde_json::to_value(ChatRequest {
        model: &config.model,
        temperature: config.temperature,
        top_p: config.top_p,
        messages,
    })
    .expect("request serializes")
}

/// Token bucket refilled continuously at `per_minute / 60` tokens per second.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(n: u32) -> Self {
        let capacity = f64::from(n.max(1));
        Self {
            capacity,
            per_sec: capacity / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.per_sec;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// Full-jitter exponential backoff for retry `attempt` (0-based).
pub fn backoff_delay(attempt: u32, rng: &mut impl Rng) -> Duration {
    let cap = BACKOFF_BASE_MS.saturating_mul(1u64 << attempt.min(16));
    Duration::from_millis(rng.random_range(0..=cap))
}

pub struct OpenAiProvider {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

impl fmt::Debug for OpenAiProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiProvider")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish()
    }
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let limiter = (config.requests_per_minute > 0)
            .then(|| RateLimiter::per_minute(config.requests_per_minute));
        Ok(Self {
            config,
            client,
            limiter,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }
}

impl ChatProvider for OpenAiProvider {
    fn name(&self) -> &str {
        "openai"
    }

    fn complete(&self, messages: &[Message]) -> Result<String, GatewayError> {
        let key = std::env::var(&self.config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| GatewayError::Auth(format!("{} is not set", self.config.api_key_env)))?;
        let body = request_body(&self.config, messages);
        let mut rng = rand::rng();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(backoff_delay(attempt - 1, &mut rng));
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let resp = match self.client.post(self.url()).bearer_auth(&key).json(&body).send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    tracing::warn!(attempt, error = %last, "chat request failed");
                    continue;
                }
            };
            let status = resp.status();
            let text = resp.text().unwrap_or_default();
            match status.as_u16() {
                200..=299 => return parse_chat_response(&text),
                401 | 403 => return Err(GatewayError::Auth(format!("{status}: {text}"))),
                429 | 500..=599 => {
                    last = format!("{status}: {text}");
                    tracing::warn!(attempt, %status, "retryable provider status");
                }
                code => {
                    return Err(GatewayError::ProviderRejection {
                        status: code,
                        body: text,
                    })
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.config.max_retries + 1,
            message: last,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Matcher {
    /// Exact [`prompt_text`].
    Exact(String),
    /// Lowercase hex SHA-256 of the prompt text.
    Hash(String),
    /// N-th sequence slot, consumed in call order when nothing else matches.
    Seq(usize),
}

/// Serialized mock script: `{"exact": {...}, "hash": {...}, "sequence": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    pub exact: HashMap<String, String>,
    pub hash: HashMap<String, String>,
    pub sequence: Vec<String>,
}

type Responder = Box<dyn Fn(&[Message]) -> Option<String> + Send + Sync>;

/// Deterministic scripted provider. Lookup order: exact prompt, prompt hash,
/// next sequence slot, then the optional responder. Anything else fails with
/// [`GatewayError::UnscriptedPrompt`].
pub struct MockProvider {
    exact: HashMap<String, String>,
    hash: HashMap<String, String>,
    slots: BTreeMap<usize, String>,
    cursor: AtomicUsize,
    responder: Option<Responder>,
}

impl fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockProvider")
            .field("exact", &self.exact.len())
            .field("hash", &self.hash.len())
            .field("slots", &self.slots.len())
            .field("responder", &self.responder.is_some())
            .finish()
    }
}

pub fn configure_mock(script: impl IntoIterator<Item = (Matcher, String)>) -> MockProvider {
    let mut mock = MockProvider::empty();
    for (m, reply) in script {
        mock = mock.with(m, reply);
    }
    mock
}

impl MockProvider {
    pub fn empty() -> Self {
        Self {
            exact: HashMap::new(),
            hash: HashMap::new(),
            slots: BTreeMap::new(),
            cursor: AtomicUsize::new(0),
            responder: None,
        }
    }

    pub fn with(mut self, matcher: Matcher, reply: impl Into<String>) -> Self {
        let reply = reply.into();
        match matcher {
            Matcher::Exact(p) => {
                self.exact.insert(p, reply);
            }
            Matcher::Hash(h) => {
                self.hash.insert(h.to_ascii_lowercase(), reply);
            }
            Matcher::Seq(i) => {
                self.slots.insert(i, reply);
            }
        }
        self
    }

    /// Fallback computed from the request; returning `None` is unscripted.
    pub fn with_responder<F>(mut self, f: F) -> Self
    where
        F: Fn(&[Message]) -> Option<String> + Send + Sync + 'static,
    {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn from_script(script: MockScript) -> Self {
        let seq = script
            .sequence
            .into_iter()
            .enumerate()
            .map(|(i, r)| (Matcher::Seq(i), r));
        configure_mock(
            script
                .exact
                .into_iter()
                .map(|(p, r)| (Matcher::Exact(p), r))
                .chain(script.hash.into_iter().map(|(h, r)| (Matcher::Hash(h), r)))
                .chain(seq),
        )
    }

    pub fn from_script_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::from_script(script))
    }

    fn next_slot(&self) -> Option<String> {
        if self.slots.is_empty() {
            return None;
        }
        let pos = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.slots.get(&pos).cloned()
    }
}

impl ChatProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, messages: &[Message]) -> Result<String, GatewayError> {
        let prompt = prompt_text(messages);
        if let Some(r) = self.exact.get(&prompt) {
            return Ok(r.clone());
        }
        let hash = hash_prompt(&prompt);
        if let Some(r) = self.hash.get(&hash) {
            return Ok(r.clone());
        }
        if let Some(r) = self.next_slot() {
            return Ok(r);
        }
        if let Some(r) = self.responder.as_ref().and_then(|f| f(messages)) {
            return Ok(r);
        }
        Err(GatewayError::UnscriptedPrompt { hash })
    }
}

/// One audited provider call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub provider_call_index: u64,
    pub request: Vec<Message>,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub call_index: u64,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("provider call #{call_index} failed: {source}")]
pub struct CallFailure {
    pub call_index: u64,
    #[source]
    pub source: GatewayError,
}

/// Audited front door to a provider. Shareable across threads; call indices
/// are strictly increasing and the audit log has one record per call.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    calls: AtomicU64,
    audit: Mutex<Vec<ChatExchange>>,
    audit_file: Option<PathBuf>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("calls", &self.calls())
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            calls: AtomicU64::new(0),
            audit: Mutex::new(Vec::new()),
            audit_file: None,
        }
    }

    /// Also append every exchange as a JSONL line to `path`.
    pub fn with_audit_file(mut self, path: impl Into<PathBuf>) -> Self {
        self.audit_file = Some(path.into());
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn audit_log(&self) -> Vec<ChatExchange> {
        self.audit.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn exchange(&self, call_index: u64) -> Option<ChatExchange> {
        self.audit
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .find(|x| x.provider_call_index == call_index)
            .cloned()
    }

    pub fn complete(&self, messages: &[Message]) -> Result<Completion, CallFailure> {
        let call_index = self.calls.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let result = self.provider.complete(messages);
        let exchange = ChatExchange {
            provider_call_index: call_index,
            request: messages.to_vec(),
            response_text: result.as_ref().cloned().unwrap_or_default(),
            error: result.as_ref().err().map(ToString::to_string),
            latency_ms: started.elapsed().as_millis() as u64,
        };
        self.record(exchange);
        result
            .map(|text| Completion { text, call_index })
            .map_err(|source| CallFailure { call_index, source })
    }

    fn record(&self, exchange: ChatExchange) {
        let mut log = self.audit.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(path) = &self.audit_file {
            let line = serde_json::to_string(&exchange).expect("exchange serializes");
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                tracing::warn!(error = %e, "could not append audit record");
            }
        }
        log.push(exchange);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(g: &Gateway, p: &str) -> Result<String, CallFailure> {
        g.complete(&[Message::user(p)]).map(|c| c.text)
    }

    #[test]
    fn exact_and_hash_matchers() {
        let h = hash_prompt("by hash");
        let g = Gateway::new(Arc::new(configure_mock([
            (Matcher::Exact("hello".into()), "world".to_string()),
            (Matcher::Hash(h.to_uppercase()), "hashed".to_string()),
        ])));
        assert_eq!(ask(&g, "hello").unwrap(), "world");
        assert_eq!(ask(&g, "hello").unwrap(), "world");
        assert_eq!(ask(&g, "by hash").unwrap(), "hashed");
        assert_eq!(g.calls(), 3);
        assert_eq!(g.audit_log().len(), 3);
    }

    #[test]
    fn unscripted_prompt_names_hash() {
        let g = Gateway::new(Arc::new(MockProvider::empty()));
        let err = ask(&g, "unknown").unwrap_err();
        match err.source {
            GatewayError::UnscriptedPrompt { hash } => assert_eq!(hash, hash_prompt("unknown")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(err.call_index, 0);
        assert_eq!(g.audit_log().len(), 1);
        assert!(g.audit_log()[0].error.is_some());
    }

    #[test]
    fn sequence_slots_exhaust() {
        let g = Gateway::new(Arc::new(configure_mock(
            (0..3).map(|i| (Matcher::Seq(i), format!("reply {i}"))),
        )));
        for i in 0..3 {
            assert_eq!(ask(&g, "anything").unwrap(), format!("reply {i}"));
        }
        assert!(matches!(
            ask(&g, "anything").unwrap_err().source,
            GatewayError::UnscriptedPrompt { .. }
        ));
        let idx: Vec<_> = g.audit_log().iter().map(|x| x.provider_call_index).collect();
        assert_eq!(idx, [0, 1, 2, 3]);
    }

    #[test]
    fn script_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(
            &path,
            r#"{"exact":{"q":"a"},"sequence":["ANSWERABLE: YES\nANSWER: x"]}"#,
        )
        .unwrap();
        let g = Gateway::new(Arc::new(MockProvider::from_script_file(&path).unwrap()));
        assert_eq!(ask(&g, "q").unwrap(), "a");
        assert!(ask(&g, "other").unwrap().starts_with("ANSWERABLE: YES"));
    }

    #[test]
    fn missing_key_fails_before_network() {
        let cfg = ProviderConfig {
            endpoint: "http://127.0.0.1:9".into(),
            api_key_env: "L2R_TEST_UNSET_KEY_VAR".into(),
            max_retries: 0,
            ..ProviderConfig::default()
        };
        let p = OpenAiProvider::new(cfg).unwrap();
        assert!(matches!(p.complete(&[Message::user("hi")]), Err(GatewayError::Auth(_))));
    }

    #[test]
    fn request_shape_and_response_parsing() {
        let cfg = ProviderConfig::default();
        let body = request_body(&cfg, &[Message::system("s"), Message::user("u")]);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["top_p"], 1.0);
        assert_eq!(body["model"], "gpt-3.5-turbo-0613");
        assert_eq!(body["messages"][1]["role"], "user");
        let text = parse_chat_response(r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#);
        assert_eq!(text.unwrap(), "hi");
        assert!(parse_chat_response(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProviderConfig::default();
        cfg.top_p = 0.0;
        assert!(cfg.validate().is_err());
        cfg.top_p = 1.0;
        cfg.temperature = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn backoff_is_bounded() {
        let mut rng = rand::rng();
        for attempt in 0..5 {
            let d = backoff_delay(attempt, &mut rng);
            assert!(d <= Duration::from_millis(500 << attempt));
        }
    }
}
