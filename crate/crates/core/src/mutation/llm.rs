use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{MutationError, MutationOperator, PromptContext, Templates};
use crate::redcode::{parse_with, ParseOptions, SyntaxError, Warrior};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// A chat-completions request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Hex SHA-256 of the serialized request; the replay lookup key.
    pub fn digest(&self) -> String {
        let body = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&body))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("HTTP transport: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("API key variable {0} is not set")]
    MissingKey(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("session log: {0}")]
    Session(String),
}

/// Anything that turns a chat request into response text. Implementations
/// are shared between nodes and must accept concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: f64,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        LlmEndpointConfig {
            base_url: "http://127.0.0.1:8080/v1".into(),
            model: "local".into(),
            api_key_env: None,
            temperature: 1.0,
            max_retries: 3,
            timeout_secs: 120.0,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<(), MutationError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(MutationError::Precondition("timeout_secs must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(MutationError::Precondition("temperature must lie in [0, 2]".into()));
        }
        Ok(())
    }
}

/// Blocking chat-completions client.
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

impl HttpBackend {
    pub fn new(cfg: &LlmEndpointConfig) -> Result<Self, BackendError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::MissingKey(var.clone()))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            api_key,
            agent,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(request)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(BackendError::Status { status, body });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&body).map_err(|e| BackendError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed("no choices".into()))
    }
}

/// One line of a session log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub request_hash: String,
    pub request: ChatRequest,
    pub response: String,
}

/// Passes requests through and appends every successful exchange to a
/// JSON-lines session file.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<File>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, session: &Path) -> Result<Self, BackendError> {
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(session)
            .map_err(|e| BackendError::Session(format!("{}: {e}", session.display())))?;
        Ok(RecordingBackend {
            inner,
            log: Mutex::new(log),
        })
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let response = self.inner.complete(request)?;
        let record = SessionRecord {
            request_hash: request.digest(),
            request: request.clone(),
            response: response.clone(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut log = self.log.lock().expect("session log lock");
        writeln!(log, "{line}").map_err(|e| BackendError::Session(e.to_string()))?;
        Ok(response)
    }
}

/// Re-serves recorded responses keyed by request hash, in recording order
/// for repeated identical requests.
pub struct ReplayBackend {
    responses: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayBackend {
    pub fn load(session: &Path) -> Result<Self, BackendError> {
        let file = File::open(session).map_err(|e| BackendError::Session(format!("{}: {e}", session.display())))?;
        let mut responses: HashMap<String, VecDeque<String>> = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Session(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SessionRecord = serde_json::from_str(&line)
                .map_err(|e| BackendError::Session(format!("line {}: {e}", i + 1)))?;
            responses.entry(record.request_hash).or_default().push_back(record.response);
        }
        Ok(ReplayBackend {
            responses: Mutex::new(responses),
        })
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let key = request.digest();
        let mut responses = self.responses.lock().expect("replay lock");
        responses
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .ok_or(BackendError::ReplayMiss(key))
    }
}

/// Code blocks fenced by triple backticks, with any language tag removed.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// The first fenced block that assembles, otherwise the whole response.
/// On failure the error of the first candidate tried is returned.
pub fn extract_program(response: &str, opts: &ParseOptions) -> Result<Warrior, SyntaxError> {
    let mut first_error = None;
    for block in fenced_blocks(response) {
        match parse_with(block, opts) {
            Ok(w) => return Ok(w),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match parse_with(response, opts) {
        Ok(w) => Ok(w),
        Err(e) => Err(first_error.unwrap_or(e)),
    }
}

/// Operator backed by a chat model. Invalid programs are retried with the
/// assembler error appended to the conversation.
pub struct LlmOperator {
    identity: String,
    backend: Arc<dyn ChatBackend>,
    config: LlmEndpointConfig,
    templates: Templates,
    limits: ParseOptions,
    last_latency: Duration,
}

impl LlmOperator {
    pub fn new(
        identity: impl Into<String>,
        backend: Arc<dyn ChatBackend>,
        config: LlmEndpointConfig,
        templates: Templates,
        limits: ParseOptions,
    ) -> Self {
        LlmOperator {
            identity: identity.into(),
            backend,
            config,
            templates,
            limits,
            last_latency: Duration::ZERO,
        }
    }

    fn call(&mut self, ctx: &PromptContext, seed: u64) -> Result<Warrior, MutationError> {
        let started = Instant::now();
        let prompt = self.templates.build_prompt(ctx)?;
        let mut messages = vec![ChatMessage::user(prompt)];
        let mut last_error = String::new();
        let attempts = self.config.max_retries + 1;
        for attempt in 0..attempts {
            let request = ChatRequest {
                model: self.config.model.clone(),
                messages: messages.clone(),
                temperature: self.config.temperature,
                seed: Some(seed.wrapping_add(u64::from(attempt))),
            };
            let response = match self.backend.complete(&request) {
                Ok(text) => text,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            match extract_program(&response, &self.limits) {
                Ok(w) => {
                    self.last_latency = started.elapsed();
                    return Ok(w.with_origin(self.identity.clone()));
                }
                Err(e) => {
                    last_error = e.to_string();
                    messages.push(ChatMessage::assistant(response));
                    messages.push(ChatMessage::user(self.templates.repair_prompt(&last_error)));
                }
            }
        }
        self.last_latency = started.elapsed();
        Err(MutationError::OperatorFailure { attempts, last_error })
    }
}

impl MutationOperator for LlmOperator {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn generate(&mut self, ctx: &PromptContext, seed: u64) -> Result<Warrior, MutationError> {
        self.call(ctx, seed)
    }

    fn mutate(&mut self, ctx: &PromptContext, seed: u64) -> Result<Warrior, MutationError> {
        if ctx.parent.is_none() {
            return Err(MutationError::Precondition("mutate needs a parent".into()));
        }
        self.call(ctx, seed)
    }

    /// Wall-clock duration of the most recent call.
    fn latency(&self) -> Duration {
        self.last_latency
    }
}
