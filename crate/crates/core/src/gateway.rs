//! Model-call gateway: one entry point for every agent and target call, with
//! bounded concurrency, retry with exponential backoff, per-call logging, and
//! two interchangeable backends — a remote chat-completion HTTP API and a
//! deterministic scripted backend for tests and offline runs.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("auth variable {0} is not set")]
    AuthMissing(String),
    #[error("rate limited by the backend")]
    RateLimited,
    #[error("request timed out")]
    Timeout,
    #[error("network failure: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

impl GatewayError {
    /// Transient errors worth retrying; everything else fails fast.
    pub fn retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited | GatewayError::Timeout | GatewayError::Network(_)
        )
    }
}

// ---------------------------------------------------------------------------
// Requests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Message {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// One chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Checked before dispatch; failures are [`GatewayError::InvalidRequest`].
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model.is_empty() {
            return Err(GatewayError::InvalidRequest("model name is empty".into()));
        }
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().any(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest("empty message content".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside 0..=2",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens is zero".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteHttp,
    Scripted,
}

/// One rule of a scripted backend. The first rule whose `when_contains`
/// occurs in the request text handles the call; an empty pattern matches
/// everything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub when_contains: String,
    /// Responses played in sequence on repeated hits; the last one repeats.
    pub respond: Vec<String>,
}

impl ScriptRule {
    /// Rule with a single, always-identical response.
    pub fn simple(when_contains: impl Into<String>, respond: impl Into<String>) -> ScriptRule {
        ScriptRule {
            when_contains: when_contains.into(),
            respond: vec![respond.into()],
        }
    }

    /// Rule that plays `responses` in order, repeating the last.
    pub fn sequence(when_contains: impl Into<String>, responses: &[&str]) -> ScriptRule {
        ScriptRule {
            when_contains: when_contains.into(),
            respond: responses.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Where calls go: a remote HTTP endpoint or an in-process script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Model name sent on the wire; also keys scripted sequencing state, so
    /// give distinct scripted backends distinct names.
    pub model: String,
    /// Chat-completions URL (remote only).
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token (remote
    /// only). Credentials are only ever read from the environment.
    pub auth_env: Option<String>,
    /// Match rules (scripted only).
    pub rules: Vec<ScriptRule>,
}

impl BackendDescriptor {
    pub fn remote(
        model: impl Into<String>,
        endpoint: impl Into<String>,
        auth_env: Option<String>,
    ) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::RemoteHttp,
            model: model.into(),
            endpoint: Some(endpoint.into()),
            auth_env,
            rules: Vec::new(),
        }
    }

    pub fn scripted(rules: Vec<ScriptRule>) -> BackendDescriptor {
        BackendDescriptor::scripted_named("scripted", rules)
    }

    pub fn scripted_named(model: impl Into<String>, rules: Vec<ScriptRule>) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Scripted,
            model: model.into(),
            endpoint: None,
            auth_env: None,
            rules,
        }
    }

    /// Short form for logs.
    pub fn summary(&self) -> String {
        match self.kind {
            BackendKind::RemoteHttp => format!(
                "http:{}@{}",
                self.model,
                self.endpoint.as_deref().unwrap_or("<unset>")
            ),
            BackendKind::Scripted => format!("script:{}", self.model),
        }
    }

    /// Single-user-message request against this backend's model.
    pub fn request(&self, content: impl Into<String>, temperature: f64) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: vec![Message::user(content)],
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// Deterministic in-process backend described entirely by match rules.
pub fn script_backend(rules: Vec<ScriptRule>) -> BackendDescriptor {
    BackendDescriptor::scripted(rules)
}

/// Completion budget for every agent and target call.
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

// ---------------------------------------------------------------------------
// Retry policy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    /// Backoff multiplier between attempts.
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 5,
            initial_backoff: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// No waiting: useful for tests and scripted runs.
    pub fn immediate(max_attempts: u32) -> RetryPolicy {
        RetryPolicy {
            max_attempts,
            initial_backoff: Duration::ZERO,
            factor: 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Call log
// ---------------------------------------------------------------------------

/// One dispatched call, as recorded in the gateway log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    /// Caller-supplied tag, e.g. `"inquiry:D5"` or `"target:vanilla"`.
    pub tag: String,
    pub model: String,
    pub backend: String,
    pub request: Vec<Message>,
    /// Attempts actually made (≥ 1).
    pub attempts: u32,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Per-job buffer of call records, appended in call order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallLog {
    records: Vec<CallRecord>,
}

impl CallLog {
    pub fn new() -> CallLog {
        CallLog::default()
    }

    pub fn records(&self) -> &[CallRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<CallRecord> {
        self.records
    }

    /// Calls whose tag equals `tag` exactly.
    pub fn count_tag(&self, tag: &str) -> usize {
        self.records.iter().filter(|r| r.tag == tag).count()
    }

    /// Calls whose tag starts with `prefix` (e.g. `"judge:"`).
    pub fn count_tag_prefix(&self, prefix: &str) -> usize {
        self.records
            .iter()
            .filter(|r| r.tag.starts_with(prefix))
            .count()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

/// Counting semaphore bounding in-flight calls across worker threads.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Semaphore {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.semaphore.permits.lock().unwrap() += 1;
        self.semaphore.available.notify_one();
    }
}

/// Shared dispatcher. Cheap to share by reference across worker threads.
pub struct Gateway {
    retry: RetryPolicy,
    limiter: Semaphore,
    request_timeout: Duration,
    /// Hit counters for sequenced script rules, keyed by backend model name
    /// and rule index.
    script_state: Mutex<HashMap<(String, usize), usize>>,
    http: OnceCell<reqwest::blocking::Client>,
}

impl Gateway {
    /// Gateway allowing up to `concurrency` in-flight calls.
    pub fn new(concurrency: usize) -> Gateway {
        Gateway::with_retry(concurrency, RetryPolicy::default())
    }

    pub fn with_retry(concurrency: usize, retry: RetryPolicy) -> Gateway {
        Gateway {
            retry,
            limiter: Semaphore::new(concurrency),
            request_timeout: Duration::from_secs(60),
            script_state: Mutex::new(HashMap::new()),
            http: OnceCell::new(),
        }
    }

    /// Dispatches one request, retrying transient failures with exponential
    /// backoff, and appends the outcome to `log` under `tag`.
    pub fn complete(
        &self,
        log: &mut CallLog,
        tag: &str,
        request: &ChatRequest,
        backend: &BackendDescriptor,
    ) -> Result<String, GatewayError> {
        request.validate()?;
        let _permit = self.limiter.acquire();

        let mut attempts = 0u32;
        let mut backoff = self.retry.initial_backoff;
        let outcome = loop {
            attempts += 1;
            match self.dispatch_once(request, backend) {
                Ok(text) => break Ok(text),
                Err(err) if err.retryable() && attempts < self.retry.max_attempts => {
                    std::thread::sleep(backoff);
                    backoff = backoff.mul_f64(self.retry.factor);
                }
                Err(err) => break Err(err),
            }
        };

        log.records.push(CallRecord {
            tag: tag.to_string(),
            model: request.model.clone(),
            backend: backend.summary(),
            request: request.messages.clone(),
            attempts,
            response: outcome.as_ref().ok().cloned(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        });
        outcome
    }

    fn dispatch_once(
        &self,
        request: &ChatRequest,
        backend: &BackendDescriptor,
    ) -> Result<String, GatewayError> {
        match backend.kind {
            BackendKind::Scripted => self.dispatch_scripted(request, backend),
            BackendKind::RemoteHttp => self.dispatch_remote(request, backend),
        }
    }

    fn dispatch_scripted(
        &self,
        request: &ChatRequest,
        backend: &BackendDescriptor,
    ) -> Result<String, GatewayError> {
        let haystack: String = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let (index, rule) = backend
            .rules
            .iter()
            .enumerate()
            .find(|(_, rule)| haystack.contains(&rule.when_contains))
            .ok_or_else(|| {
                GatewayError::MalformedResponse(format!(
                    "no scripted rule matched request starting {:?}",
                    haystack.chars().take(80).collect::<String>()
                ))
            })?;
        if rule.respond.is_empty() {
            return Err(GatewayError::MalformedResponse(format!(
                "scripted rule {index} has no responses"
            )));
        }
        let mut state = self.script_state.lock().unwrap();
        let hits = state.entry((backend.model.clone(), index)).or_insert(0);
        let response = rule.respond[(*hits).min(rule.respond.len() - 1)].clone();
        *hits += 1;
        Ok(response)
    }

    fn dispatch_remote(
        &self,
        request: &ChatRequest,
        backend: &BackendDescriptor,
    ) -> Result<String, GatewayError> {
        let endpoint = backend
            .endpoint
            .as_deref()
            .ok_or_else(|| GatewayError::InvalidRequest("remote backend has no endpoint".into()))?;
        // Credentials are resolved before any network activity.
        let token = match &backend.auth_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| GatewayError::AuthMissing(var.clone()))?)
            }
            None => None,
        };
        let client = self.http.get_or_try_init(|| {
            reqwest::blocking::Client::builder()
                .timeout(self.request_timeout)
                .build()
                .map_err(|e| GatewayError::Network(e.to_string()))
        })?;

        let mut call = client.post(endpoint).json(&WireRequest::from(request));
        if let Some(token) = token {
            call = call.bearer_auth(token);
        }
        let response = call.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout
            } else {
                GatewayError::Network(e.to_string())
            }
        })?;

        let status = response.status();
        if status.as_u16() == 429 {
            return Err(GatewayError::RateLimited);
        }
        if status.as_u16() == 408 {
            return Err(GatewayError::Timeout);
        }
        if status.is_server_error() {
            return Err(GatewayError::Network(format!("server returned {status}")));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(GatewayError::InvalidRequest(format!(
                "backend returned {status}: {}",
                body.chars().take(200).collect::<String>()
            )));
        }
        let parsed: WireResponse = response
            .json()
            .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedResponse("empty choice list".into()))?;
        Ok(choice.message.content)
    }
}

/// Chat-completions request body.
#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

impl<'a> From<&'a ChatRequest> for WireRequest<'a> {
    fn from(req: &'a ChatRequest) -> WireRequest<'a> {
        WireRequest {
            model: &req.model,
            messages: &req.messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        }
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}
