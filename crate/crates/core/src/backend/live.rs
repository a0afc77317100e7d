//! Chat-completion client for hosted models (OpenAI-compatible wire format).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, BackendRequest, BackendResponse};
use crate::transport::{retry, AttemptError, RateLimiter, RetryError, RetryPolicy};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "GEOSR_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveConfig {
    /// Full chat-completions URL, e.g. `https://api.openai.com/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout_secs: u64,
    /// Process-wide cap on live calls; 0 disables limiting.
    pub requests_per_second: f64,
    pub retry: RetryPolicy,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_tokens: Some(256),
            timeout_secs: 60,
            requests_per_second: 2.0,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl LiveBackend {
    /// Reads the API key from `GEOSR_API_KEY`. A missing key is allowed for
    /// local endpoints that need no authentication.
    pub fn from_env(config: LiveConfig) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            log::warn!("{API_KEY_ENV} not set; sending requests without Authorization header");
        }
        Self::new(config, key)
    }

    pub fn new(config: LiveConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        if !(config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://")) {
            return Err(BackendError::Config(format!("endpoint {:?} is not an http(s) URL", config.endpoint)));
        }
        if config.model.trim().is_empty() {
            return Err(BackendError::Config("model name is empty".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        let limiter = RateLimiter::new(config.requests_per_second);
        Ok(Self { config, api_key, agent, limiter })
    }

    fn body(&self, prompt: &str) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, AttemptError<BackendError>> {
        self.limiter.acquire();
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text =
            resp.body_mut().read_to_string().map_err(|e| AttemptError::Transient(format!("reading body: {e}")))?;
        match status {
            200..=299 => {
                let parsed: ChatResponse = serde_json::from_str(&text)
                    .map_err(|e| AttemptError::Fatal(BackendError::Malformed(format!("{e}: {}", truncate(&text)))))?;
                parsed
                    .choices
                    .into_iter()
                    .next()
                    .and_then(|c| c.message.content)
                    .ok_or_else(|| AttemptError::Fatal(BackendError::Malformed("no message content in reply".into())))
            }
            401 | 403 => Err(AttemptError::Fatal(BackendError::Auth(format!("HTTP {status}: {}", truncate(&text))))),
            408 | 429 | 500..=599 => Err(AttemptError::Transient(format!("HTTP {status}"))),
            _ => Err(AttemptError::Fatal(BackendError::Rejected { status, body: truncate(&text) })),
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(300).collect()
}

impl Backend for LiveBackend {
    fn invoke(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let start = Instant::now();
        let body = self.body(&request.prompt);
        let mut rng = rand::rng();
        match retry(&self.config.retry, &mut rng, |_| self.attempt(&body)) {
            Ok((text, attempts)) => {
                Ok(BackendResponse { text, attempts, elapsed_ms: start.elapsed().as_millis() as u64 })
            }
            Err(RetryError::Exhausted { attempts, last }) => Err(BackendError::RetriesExhausted { attempts, last }),
            Err(RetryError::Fatal { error, .. }) => Err(error),
        }
    }
}
