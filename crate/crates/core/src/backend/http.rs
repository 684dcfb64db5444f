//! OpenAI-compatible `POST {base_url}/chat/completions` client.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, ChatBackend, Completion, GenerationRequest, Usage};

pub const API_KEY_ENV: &str = "KARE_API_KEY";

/// Retries apply to transport failures, HTTP 429 and 5xx. Other 4xx
/// responses are returned immediately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Fraction of the computed delay added as uniform random jitter.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << retry.min(16));
        let capped = exp.min(self.max_delay);
        let jitter = if self.jitter > 0.0 {
            rand::rng().random_range(0.0..=self.jitter)
        } else {
            0.0
        };
        capped.mul_f64(1.0 + jitter)
    }
}

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl OpenAiConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct OpenAiBackend {
    config: OpenAiConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(Completion),
    Retry {
        err: BackendError,
        retry_after: Option<Duration>,
    },
    Fail(BackendError),
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url)
    }

    fn body(req: &GenerationRequest) -> serde_json::Value {
        json!({
            "model": req.model_id,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    fn attempt(&self, req: &GenerationRequest) -> Attempt {
        let mut call = self
            .agent
            .post(&self.endpoint())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match call.send_json(Self::body(req)) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    err: BackendError::Transport(e.to_string()),
                    retry_after: None,
                }
            }
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry {
                    err: BackendError::Transport(e.to_string()),
                    retry_after: None,
                }
            }
        };
        match status {
            200..=299 => match serde_json::from_str::<ChatResponse>(&text) {
                Ok(parsed) => match parsed.choices.into_iter().next() {
                    Some(choice) => Attempt::Done(Completion {
                        text: choice.message.content.unwrap_or_default(),
                        usage: parsed.usage.map(|u| Usage {
                            prompt_tokens: u.prompt_tokens,
                            completion_tokens: u.completion_tokens,
                        }),
                        retries: 0,
                    }),
                    None => Attempt::Fail(BackendError::MalformedResponse("no choices".into())),
                },
                Err(e) => Attempt::Fail(BackendError::MalformedResponse(e.to_string())),
            },
            429 => Attempt::Retry {
                err: BackendError::RateLimited { attempts: 0 },
                retry_after,
            },
            500..=599 => Attempt::Retry {
                err: BackendError::Api { status, body: text },
                retry_after,
            },
            _ => Attempt::Fail(BackendError::Api { status, body: text }),
        }
    }
}

impl ChatBackend for OpenAiBackend {
    fn chat(&self, req: &GenerationRequest) -> Result<Completion, BackendError> {
        let policy = &self.config.retry;
        let attempts = policy.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(req) {
                Attempt::Done(mut c) => {
                    c.retries = attempt - 1;
                    return Ok(c);
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry { err, retry_after } => {
                    if attempt >= attempts {
                        return Err(match err {
                            BackendError::RateLimited { .. } => {
                                BackendError::RateLimited { attempts: attempt }
                            }
                            other => other,
                        });
                    }
                    let delay = retry_after
                        .map(|d| d.min(policy.max_delay))
                        .unwrap_or_else(|| policy.backoff(attempt - 1));
                    log::debug!("{err}; retrying in {delay:?} (attempt {attempt})");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
            jitter: 0.0,
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(1), Duration::from_millis(200));
        assert_eq!(p.backoff(2), Duration::from_millis(350));
        let jittered = RetryPolicy { jitter: 0.5, ..p };
        let d = jittered.backoff(0);
        assert!(d >= Duration::from_millis(100) && d <= Duration::from_millis(150));
    }

    #[test]
    fn base_url_trailing_slash() {
        let b = OpenAiBackend::new(OpenAiConfig::new("http://localhost:1/v1/"));
        assert_eq!(b.endpoint(), "http://localhost:1/v1/chat/completions");
    }
}
