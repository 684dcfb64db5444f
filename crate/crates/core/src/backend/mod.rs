//! Text-generation backends.
//!
//! [`Backends`] routes each request to the backend configured for its
//! [`BackendRole`], enforces the per-run request cap and the in-flight
//! limit, and keeps run telemetry. Two implementations of [`ChatBackend`]
//! exist: [`OpenAiBackend`] for OpenAI-compatible chat services and
//! [`ScriptedBackend`] for deterministic tests.

mod http;
mod scripted;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

pub use http::{OpenAiBackend, OpenAiConfig, RetryPolicy, API_KEY_ENV};
pub use scripted::{ScriptRule, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("API error (HTTP {status}): {body}")]
    Api { status: u16, body: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("request cap of {cap} reached")]
    BudgetExceeded { cap: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted rule matches stage `{stage}`: {excerpt}")]
    Unscripted { stage: String, excerpt: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

impl BackendError {
    pub fn name(&self) -> &'static str {
        match self {
            BackendError::Transport(_) => "TransportError",
            BackendError::Api { .. } => "ApiError",
            BackendError::RateLimited { .. } => "RateLimited",
            BackendError::BudgetExceeded { .. } => "BudgetExceeded",
            BackendError::InvalidRequest(_) => "InvalidRequest",
            BackendError::Unscripted { .. } => "Unscripted",
            BackendError::MalformedResponse(_) => "MalformedResponse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
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

/// Pipeline stage a request belongs to. Not sent over the wire; scripted
/// rules and traces use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Vanilla,
    Kg,
    Cot,
    Gen,
    Adequacy,
    Refine,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Vanilla => "vanilla",
            Stage::Kg => "kg",
            Stage::Cot => "cot",
            Stage::Gen => "gen",
            Stage::Adequacy => "adequacy",
            Stage::Refine => "refine",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub stage: Stage,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        let invalid = |m: &str| Err(BackendError::InvalidRequest(m.to_string()));
        if !(self.temperature >= 0.0) {
            return invalid("temperature must be non-negative");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return invalid("message content is empty");
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) {
            return invalid("system message must come first");
        }
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return invalid("no user message");
        }
        Ok(())
    }

    /// Concatenated user message contents.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
    pub retries: u32,
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &GenerationRequest) -> Result<Completion, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendRole {
    Generator,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RoleSettings {
    fn default() -> Self {
        Self {
            model: "scripted".into(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub requests: u64,
    pub retries: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Default)]
struct Telemetry {
    requests: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

struct RoleBackend {
    backend: Arc<dyn ChatBackend>,
    settings: RoleSettings,
}

/// Generator and expert backends plus shared run limits.
pub struct Backends {
    generator: RoleBackend,
    expert: RoleBackend,
    limiter: Semaphore,
    request_cap: Option<u64>,
    issued: AtomicU64,
    telemetry: Telemetry,
}

pub const DEFAULT_MAX_INFLIGHT: usize = 4;

impl Backends {
    pub fn new(
        generator: Arc<dyn ChatBackend>,
        generator_settings: RoleSettings,
        expert: Arc<dyn ChatBackend>,
        expert_settings: RoleSettings,
    ) -> Self {
        Self {
            generator: RoleBackend {
                backend: generator,
                settings: generator_settings,
            },
            expert: RoleBackend {
                backend: expert,
                settings: expert_settings,
            },
            limiter: Semaphore::new(DEFAULT_MAX_INFLIGHT),
            request_cap: None,
            issued: AtomicU64::new(0),
            telemetry: Telemetry::default(),
        }
    }

    /// Both roles served by the same backend with default settings.
    pub fn shared(backend: Arc<dyn ChatBackend>) -> Self {
        Self::new(
            backend.clone(),
            RoleSettings::default(),
            backend,
            RoleSettings::default(),
        )
    }

    pub fn with_max_inflight(mut self, n: usize) -> Self {
        self.limiter = Semaphore::new(n);
        self
    }

    pub fn with_request_cap(mut self, cap: Option<u64>) -> Self {
        self.request_cap = cap;
        self
    }

    fn role(&self, role: BackendRole) -> &RoleBackend {
        match role {
            BackendRole::Generator => &self.generator,
            BackendRole::Expert => &self.expert,
        }
    }

    pub fn settings(&self, role: BackendRole) -> &RoleSettings {
        &self.role(role).settings
    }

    /// Builds a request using the role's model settings.
    pub fn request(
        &self,
        role: BackendRole,
        stage: Stage,
        messages: Vec<ChatMessage>,
    ) -> GenerationRequest {
        let s = self.settings(role);
        GenerationRequest {
            stage,
            messages,
            temperature: s.temperature,
            max_tokens: s.max_tokens,
            model_id: s.model.clone(),
        }
    }

    /// Sends `req` to the backend for `role` and returns the first choice's
    /// content with surrounding whitespace stripped.
    pub fn complete(
        &self,
        role: BackendRole,
        req: &GenerationRequest,
    ) -> Result<String, BackendError> {
        req.validate()?;
        if let Some(cap) = self.request_cap {
            let n = self.issued.fetch_add(1, Ordering::SeqCst);
            if n >= cap {
                return Err(BackendError::BudgetExceeded { cap });
            }
        }
        let _permit = self.limiter.acquire();
        self.telemetry.requests.fetch_add(1, Ordering::Relaxed);
        let result = self.role(role).backend.chat(req);
        match result {
            Ok(c) => {
                let t = &self.telemetry;
                t.retries.fetch_add(c.retries as u64, Ordering::Relaxed);
                if let Some(u) = c.usage {
                    t.prompt_tokens
                        .fetch_add(u.prompt_tokens, Ordering::Relaxed);
                    t.completion_tokens
                        .fetch_add(u.completion_tokens, Ordering::Relaxed);
                }
                Ok(c.text.trim().to_string())
            }
            Err(e) => {
                self.telemetry.failures.fetch_add(1, Ordering::Relaxed);
                if let BackendError::RateLimited { attempts } = &e {
                    self.telemetry
                        .retries
                        .fetch_add(attempts.saturating_sub(1) as u64, Ordering::Relaxed);
                }
                Err(e)
            }
        }
    }

    pub fn telemetry(&self) -> TelemetrySnapshot {
        let t = &self.telemetry;
        TelemetrySnapshot {
            requests: t.requests.load(Ordering::Relaxed),
            retries: t.retries.load(Ordering::Relaxed),
            failures: t.failures.load(Ordering::Relaxed),
            prompt_tokens: t.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: t.completion_tokens.load(Ordering::Relaxed),
        }
    }
}
