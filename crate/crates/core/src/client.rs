//! Completion interface over a scripted mock and an OpenAI-compatible HTTP
//! endpoint, plus JSON extraction and bounded re-prompting.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{debug, warn};

use crate::types::{ChatMessage, ChatRole, CostLedger, Role, TokenUsage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_decode_tokens: Option<u32>,
    pub model_name: String,
}

impl CompletionRequest {
    pub fn new(model_name: impl Into<String>, messages: Vec<ChatMessage>, temperature: f64) -> Self {
        Self { messages, temperature, max_decode_tokens: None, model_name: model_name.into() }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.messages.is_empty() {
            return Err(ClientError::InvalidRequest("messages must not be empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ClientError::InvalidRequest(format!("temperature {} is not a finite non-negative number", self.temperature)));
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.is_empty()) {
            return Err(ClientError::InvalidRequest(format!("message {i} has empty content")));
        }
        Ok(())
    }

    /// Content of the last user message, or of the last message when no user
    /// message exists.
    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .or_else(|| self.messages.last())
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider protocol error: {0}")]
    Protocol(String),
    #[error("client configuration error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ClientError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, ClientError::Transport { .. })
    }
}

/// Anything that can answer a chat completion request.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for Arc<M> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        (**self).complete(request)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        (**self).complete(request)
    }
}

/// Counts tokens for mock usage accounting.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// `ceil(chars / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharsPerFour;

impl TokenCounter for CharsPerFour {
    fn count(&self, text: &str) -> u64 {
        estimate_tokens(text)
    }
}

pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

fn prompt_tokens(counter: &dyn TokenCounter, messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| counter.count(&m.content)).sum()
}

// ---------------------------------------------------------------------------
// Mock

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    /// Responses consumed front to back; exhaustion is an error.
    Queue,
    /// First rule whose pattern occurs in the last user message wins; a rule
    /// without a pattern matches everything.
    Pattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub mode: MockMode,
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { mode: MockMode::Queue, rules: responses.into_iter().map(|r| MockRule { pattern: None, response: r.into() }).collect() }
    }

    pub fn pattern<I, P, S>(rules: I) -> Self
    where
        I: IntoIterator<Item = (Option<P>, S)>,
        P: Into<String>,
        S: Into<String>,
    {
        Self {
            mode: MockMode::Pattern,
            rules: rules.into_iter().map(|(p, r)| MockRule { pattern: p.map(Into::into), response: r.into() }).collect(),
        }
    }
}

type ResponderFn = dyn Fn(&CompletionRequest) -> Result<String, ClientError> + Send + Sync;

enum Responder {
    Queue(Mutex<VecDeque<String>>),
    Pattern(Vec<MockRule>),
    Func(Box<ResponderFn>),
}

/// Deterministic scripted model. Records every request it receives.
pub struct MockModel {
    responder: Responder,
    counter: Box<dyn TokenCounter>,
    log: Mutex<Vec<CompletionRequest>>,
}

impl std::fmt::Debug for MockModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockModel").field("calls", &self.call_count()).finish()
    }
}

impl MockModel {
    pub fn new(script: MockScript) -> Self {
        let responder = match script.mode {
            MockMode::Queue => Responder::Queue(Mutex::new(script.rules.into_iter().map(|r| r.response).collect())),
            MockMode::Pattern => Responder::Pattern(script.rules),
        };
        Self::with_responder(responder)
    }

    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(MockScript::queue(responses))
    }

    /// Computes each response from the request.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> String + Send + Sync + 'static,
    {
        Self::with_responder(Responder::Func(Box::new(move |r| Ok(f(r)))))
    }

    /// Like [`MockModel::from_fn`] but the closure may fail.
    pub fn from_try_fn<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, ClientError> + Send + Sync + 'static,
    {
        Self::with_responder(Responder::Func(Box::new(f)))
    }

    fn with_responder(responder: Responder) -> Self {
        Self { responder, counter: Box::new(CharsPerFour), log: Mutex::new(Vec::new()) }
    }

    pub fn with_token_counter(mut self, counter: impl TokenCounter + 'static) -> Self {
        self.counter = Box::new(counter);
        self
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("mock log poisoned").len()
    }
}

impl LanguageModel for MockModel {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        request.validate()?;
        let text = match &self.responder {
            Responder::Queue(queue) => {
                // Hold the log lock while popping so arrival order matches consumption order.
                let mut log = self.log.lock().expect("mock log poisoned");
                let next = queue.lock().expect("mock queue poisoned").pop_front();
                log.push(request.clone());
                next.ok_or_else(|| ClientError::Config(format!("mock script exhausted after {} call(s)", log.len() - 1)))?
            }
            Responder::Pattern(rules) => {
                self.log.lock().expect("mock log poisoned").push(request.clone());
                let last = request.last_user_content();
                rules
                    .iter()
                    .find(|r| r.pattern.as_deref().is_none_or(|p| last.contains(p)))
                    .map(|r| r.response.clone())
                    .ok_or_else(|| ClientError::Config("no mock rule matches the request".into()))?
            }
            Responder::Func(f) => {
                self.log.lock().expect("mock log poisoned").push(request.clone());
                f(request)?
            }
        };
        let usage = TokenUsage::new(prompt_tokens(self.counter.as_ref(), &request.messages), self.counter.count(&text));
        Ok(CompletionResponse { text, usage })
    }
}

// ---------------------------------------------------------------------------
// HTTP

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff: Duration::from_secs(1) }
    }
}

/// POSTs `body` as JSON, retrying transport failures, 429 and 5xx with
/// exponential backoff. Returns the parsed JSON body of the first 2xx reply.
pub(crate) fn post_json_with_retry(
    agent: &ureq::Agent,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
    retry: RetryConfig,
) -> Result<Value, ClientError> {
    let attempts = retry.max_attempts.max(1);
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            let backoff = retry.initial_backoff * 2u32.pow(attempt - 2);
            debug!(attempt, ?backoff, "retrying request");
            std::thread::sleep(backoff);
        }
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                if (200..300).contains(&status) {
                    return serde_json::from_str(&text).map_err(|e| ClientError::Protocol(format!("response is not JSON: {e}")));
                }
                if status == 429 || status >= 500 {
                    last_error = format!("HTTP {status}: {}", truncate(&text, 200));
                    warn!(status, attempt, "retriable HTTP status");
                    continue;
                }
                return Err(ClientError::Protocol(format!("HTTP {status}: {}", truncate(&text, 200))));
            }
            Err(e) => {
                last_error = e.to_string();
                warn!(attempt, error = %e, "transport failure");
            }
        }
    }
    Err(ClientError::Transport { attempts, message: last_error })
}

fn truncate(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub(crate) fn http_agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(Duration::from_secs(600))).build().into()
}

/// OpenAI-compatible `/v1/chat/completions` client.
#[derive(Debug, Clone)]
pub struct HttpModel {
    base_url: String,
    api_key: Option<String>,
    retry: RetryConfig,
    agent: ureq::Agent,
}

impl HttpModel {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), api_key, retry: RetryConfig::default(), agent: http_agent() }
    }

    /// Reads the base URL and (optional) API key from the named environment variables.
    pub fn from_env(url_var: &str, key_var: &str) -> Result<Self, ClientError> {
        let url = std::env::var(url_var).map_err(|_| ClientError::Config(format!("environment variable {url_var} is not set")))?;
        Ok(Self::new(url, std::env::var(key_var).ok()))
    }

    pub fn with_retry(mut self, retry: RetryConfig) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }
}

pub(crate) fn chat_body(request: &CompletionRequest) -> Value {
    let mut body = serde_json::json!({
        "model": request.model_name,
        "messages": request.messages,
        "temperature": request.temperature,
    });
    if let Some(max) = request.max_decode_tokens {
        body["max_tokens"] = max.into();
    }
    body
}

pub(crate) fn parse_chat_payload(payload: &Value) -> Result<CompletionResponse, ClientError> {
    let text = payload
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ClientError::Protocol("missing choices[0].message.content".into()))?
        .to_string();
    let usage = match payload.get("usage") {
        Some(u) => {
            let field = |key: &str| u.get(key).and_then(Value::as_u64).ok_or_else(|| ClientError::Protocol(format!("missing usage.{key}")));
            TokenUsage::new(field("prompt_tokens")?, field("completion_tokens")?)
        }
        None => return Err(ClientError::Protocol("missing usage".into())),
    };
    Ok(CompletionResponse { text, usage })
}

impl LanguageModel for HttpModel {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        request.validate()?;
        let payload = post_json_with_retry(&self.agent, &self.endpoint(), self.api_key.as_deref(), &chat_body(request), self.retry)?;
        parse_chat_payload(&payload)
    }
}

// ---------------------------------------------------------------------------
// JSON extraction

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("could not extract a JSON object: {reason}")]
pub struct ExtractionError {
    pub reason: String,
    pub raw: String,
}

/// Returns the last ```json fenced block if one exists, otherwise the first
/// balanced `{...}` object that parses.
pub fn extract_json_block(text: &str) -> Result<Value, ExtractionError> {
    const FENCE: &str = "```json";
    if let Some(pos) = text.rfind(FENCE) {
        let body = &text[pos + FENCE.len()..];
        let body = match body.find("```") {
            Some(end) => &body[..end],
            None => body,
        };
        return parse_lenient(body.trim())
            .or_else(|| first_object(body))
            .ok_or_else(|| ExtractionError { reason: "fenced json block does not parse".into(), raw: text.to_string() });
    }
    first_object(text).ok_or_else(|| ExtractionError { reason: "no JSON object found".into(), raw: text.to_string() })
}

fn first_object(text: &str) -> Option<Value> {
    text.char_indices()
        .filter(|&(_, c)| c == '{')
        .find_map(|(start, _)| balanced_end(&text[start..]).and_then(|end| parse_lenient(&text[start..start + end])))
}

/// Byte length of the balanced object starting at `s[0] == '{'`.
fn balanced_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses JSON, retrying once with trailing commas removed.
fn parse_lenient(s: &str) -> Option<Value> {
    serde_json::from_str(s).ok().or_else(|| serde_json::from_str(&strip_trailing_commas(s)).ok()).filter(Value::is_object)
}

fn strip_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
        } else if c == '"' {
            in_string = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

// ---------------------------------------------------------------------------
// Bounded re-prompting

pub const DEFAULT_MAX_RETRIES: usize = 3;

pub fn json_feedback(err: &ExtractionError) -> String {
    format!("Your last reply was not valid JSON ({}). Reply again with exactly one JSON object inside a ```json fenced block.", err.reason)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub raw: String,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("reply rejected after {attempts} attempt(s): {feedback}")]
    Rejected { attempts: usize, feedback: String, raw: String },
}

/// Issues `request` and parses the reply. On rejection the same request is
/// re-sent with the parser's feedback appended as a user message, up to
/// `max_retries` times. Usage of every attempt is recorded under `role`.
pub fn complete_parsed<T>(
    client: &dyn LanguageModel,
    request: &CompletionRequest,
    role: Role,
    ledger: &CostLedger,
    max_retries: usize,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Parsed<T>, CallError> {
    let mut attempt_request = request.clone();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let response = client.complete(&attempt_request)?;
        ledger.record(role, response.usage);
        match parse(&response.text) {
            Ok(value) => return Ok(Parsed { value, raw: response.text, attempts }),
            Err(feedback) if attempts > max_retries => {
                return Err(CallError::Rejected { attempts, feedback, raw: response.text });
            }
            Err(feedback) => {
                debug!(attempts, %feedback, "re-prompting after rejected reply");
                attempt_request = request.clone();
                attempt_request.messages.push(ChatMessage::user(feedback));
            }
        }
    }
}
