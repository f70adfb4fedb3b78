//! Provider-agnostic chat-completion client speaking the OpenAI-compatible
//! wire protocol: `POST {base_url}/chat/completions` with bearer auth and a
//! JSON body carrying `model`, `messages`, `temperature`, `max_tokens`.
//!
//! Transport errors and 429/5xx responses are retried with exponential
//! backoff and full jitter; other 4xx responses fail immediately. The API
//! key never appears in logs or `Debug` output.

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default base URL when `FLOW_API_BASE` is unset.
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
/// Default model when `FLOW_MODEL` is unset.
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One chat-completion call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Provider endpoint settings plus the retry policy.
#[derive(Clone)]
pub struct ProviderConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    /// Total attempts per call, including the first (>= 1).
    pub max_attempts: u32,
    /// Base delay of the exponential backoff (doubled per retry, scaled by
    /// full jitter).
    pub backoff_base: Duration,
    /// Concurrent in-flight requests allowed through one client.
    pub max_concurrent_requests: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: DEFAULT_API_BASE.to_string(),
            api_key: String::new(),
            model: DEFAULT_MODEL.to_string(),
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff_base: Duration::from_secs(1),
            max_concurrent_requests: 8,
        }
    }
}

impl fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &"[redacted]")
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("max_attempts", &self.max_attempts)
            .field("backoff_base", &self.backoff_base)
            .field("max_concurrent_requests", &self.max_concurrent_requests)
            .finish()
    }
}

impl ProviderConfig {
    /// Reads `FLOW_API_KEY` (required), `FLOW_API_BASE`, and `FLOW_MODEL`.
    pub fn from_env() -> Result<Self, ClientError> {
        Self::from_lookup(|key| std::env::var(key).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ClientError> {
        let api_key = lookup("FLOW_API_KEY").filter(|k| !k.is_empty()).ok_or(
            ClientError::InvalidConfig("FLOW_API_KEY is not set".to_string()),
        )?;
        let mut config = ProviderConfig {
            api_key,
            ..ProviderConfig::default()
        };
        if let Some(base) = lookup("FLOW_API_BASE").filter(|b| !b.is_empty()) {
            config.base_url = base;
        }
        if let Some(model) = lookup("FLOW_MODEL").filter(|m| !m.is_empty()) {
            config.model = model;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(ClientError::InvalidConfig(format!(
                "base_url '{}' is not an http(s) URL",
                self.base_url
            )));
        }
        if self.max_attempts == 0 {
            return Err(ClientError::InvalidConfig(
                "max_attempts must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Token counters, also used as a per-run accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub requests: u64,
}

impl TokenUsage {
    pub fn add(&mut self, other: &TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.total_tokens += other.total_tokens;
        self.requests += other.requests;
    }
}

/// Shared accumulator of token usage across planner and agent calls.
#[derive(Debug, Clone, Default)]
pub struct UsageMeter(Arc<Mutex<TokenUsage>>);

impl UsageMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, usage: &TokenUsage) {
        self.0.lock().unwrap().add(usage);
    }

    pub fn snapshot(&self) -> TokenUsage {
        *self.0.lock().unwrap()
    }
}

/// A successful completion.
#[derive(Debug, Clone)]
pub struct Completion {
    pub content: String,
    pub usage: TokenUsage,
    /// Attempts spent, including the successful one.
    pub attempts: u32,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {code}: {message}")]
    Status { code: u16, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
    #[serde(default)]
    total_tokens: u64,
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    available: Mutex<usize>,
    signal: Condvar,
}

impl Permits {
    fn new(count: usize) -> Self {
        Permits {
            available: Mutex::new(count.max(1)),
            signal: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.signal.wait(available).unwrap();
        }
        *available -= 1;
    }

    fn release(&self) {
        *self.available.lock().unwrap() += 1;
        self.signal.notify_one();
    }
}

/// Blocking chat-completion client. Cloning shares the connection pool and
/// the concurrency limit.
#[derive(Clone)]
pub struct LlmClient {
    config: Arc<ProviderConfig>,
    http: reqwest::blocking::Client,
    permits: Arc<Permits>,
}

impl LlmClient {
    pub fn new(config: ProviderConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ClientError::InvalidConfig(format!("http client: {e}")))?;
        let permits = Arc::new(Permits::new(config.max_concurrent_requests));
        Ok(LlmClient {
            config: Arc::new(config),
            http,
            permits,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Sends one chat-completion call, retrying transport errors and
    /// 429/5xx responses with exponential backoff and full jitter. The
    /// request is never mutated or reordered.
    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        self.permits.acquire();
        let result = self.complete_inner(request);
        self.permits.release();
        result
    }

    fn complete_inner(&self, request: &CompletionRequest) -> Result<Completion, ClientError> {
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let endpoint = self.config.endpoint();
        let mut last_retryable = String::new();

        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                let delay = backoff_delay(self.config.backoff_base, attempt - 1);
                log::debug!("retrying {endpoint} (attempt {attempt}) after {delay:?}");
                std::thread::sleep(delay);
            }

            let sent = self
                .http
                .post(&endpoint)
                .bearer_auth(&self.config.api_key)
                .json(&body)
                .send();

            let response = match sent {
                Ok(response) => response,
                Err(e) => {
                    last_retryable = redact(&e.to_string(), &self.config.api_key);
                    log::warn!("transport error on attempt {attempt}: {last_retryable}");
                    continue;
                }
            };

            let status = response.status().as_u16();
            if status == 429 || status >= 500 {
                last_retryable = format!("HTTP {status}");
                log::warn!("retryable status on attempt {attempt}: {last_retryable}");
                continue;
            }
            if status >= 400 {
                let message = redact(
                    &response.text().unwrap_or_default(),
                    &self.config.api_key,
                );
                return Err(ClientError::Status {
                    code: status,
                    message,
                });
            }

            let text = response
                .text()
                .map_err(|e| ClientError::Protocol(format!("unreadable body: {e}")))?;
            let parsed: WireResponse = serde_json::from_str(&text)
                .map_err(|e| ClientError::Protocol(format!("non-JSON body: {e}")))?;
            let choice = parsed
                .choices
                .into_iter()
                .next()
                .ok_or_else(|| ClientError::Protocol("response has no choices".to_string()))?;
            let usage = parsed.usage.unwrap_or_default();
            return Ok(Completion {
                content: choice.message.content.unwrap_or_default(),
                usage: TokenUsage {
                    prompt_tokens: usage.prompt_tokens,
                    completion_tokens: usage.completion_tokens,
                    total_tokens: usage.total_tokens,
                    requests: 1,
                },
                attempts: attempt,
            });
        }

        Err(ClientError::Transport {
            attempts: self.config.max_attempts,
            message: last_retryable,
        })
    }
}

/// One-shot helper around [`LlmClient`].
pub fn complete(
    config: &ProviderConfig,
    request: &CompletionRequest,
) -> Result<Completion, ClientError> {
    LlmClient::new(config.clone())?.complete(request)
}

/// Full-jitter exponential backoff: uniform in `[0, base * 2^(retry-1)]`,
/// so expected delays double per retry.
fn backoff_delay(base: Duration, retry: u32) -> Duration {
    use rand::Rng;
    let cap = base.as_secs_f64() * 2f64.powi(retry.saturating_sub(1) as i32);
    Duration::from_secs_f64(rand::rng().random::<f64>() * cap)
}

fn redact(text: &str, secret: &str) -> String {
    if secret.is_empty() {
        text.to_string()
    } else {
        text.replace(secret, "[redacted]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_output_redacts_the_api_key() {
        let config = ProviderConfig {
            api_key: "sk-secret-123".to_string(),
            ..ProviderConfig::default()
        };
        let debug = format!("{config:?}");
        assert!(!debug.contains("sk-secret-123"));
        assert!(debug.contains("[redacted]"));
    }

    #[test]
    fn from_lookup_applies_env_precedence() {
        let config = ProviderConfig::from_lookup(|key| match key {
            "FLOW_API_KEY" => Some("k".to_string()),
            "FLOW_API_BASE" => Some("http://localhost:9000/v1".to_string()),
            "FLOW_MODEL" => Some("local-model".to_string()),
            _ => None,
        })
        .unwrap();
        assert_eq!(config.base_url, "http://localhost:9000/v1");
        assert_eq!(config.model, "local-model");
        assert_eq!(config.endpoint(), "http://localhost:9000/v1/chat/completions");

        let defaulted = ProviderConfig::from_lookup(|key| match key {
            "FLOW_API_KEY" => Some("k".to_string()),
            _ => None,
        })
        .unwrap();
        assert_eq!(defaulted.base_url, DEFAULT_API_BASE);

        assert!(ProviderConfig::from_lookup(|_| None).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_url = ProviderConfig {
            base_url: "ftp://nope".to_string(),
            ..ProviderConfig::default()
        };
        assert!(bad_url.validate().is_err());

        let no_attempts = ProviderConfig {
            max_attempts: 0,
            ..ProviderConfig::default()
        };
        assert!(no_attempts.validate().is_err());
    }

    #[test]
    fn backoff_expectation_is_nondecreasing() {
        // expected delay for retry r is base * 2^(r-1) / 2; sample means
        // should be ordered for successive retries
        let base = Duration::from_millis(64);
        let mean = |retry: u32| {
            (0..200)
                .map(|_| backoff_delay(base, retry).as_secs_f64())
                .sum::<f64>()
                / 200.0
        };
        let m1 = mean(1);
        let m3 = mean(3);
        assert!(m3 > m1, "expected jittered delays to grow: {m1} vs {m3}");
    }

    #[test]
    fn usage_meter_accumulates() {
        let meter = UsageMeter::new();
        meter.record(&TokenUsage {
            prompt_tokens: 10,
            completion_tokens: 5,
            total_tokens: 15,
            requests: 1,
        });
        meter.record(&TokenUsage {
            prompt_tokens: 1,
            completion_tokens: 1,
            total_tokens: 2,
            requests: 1,
        });
        let total = meter.snapshot();
        assert_eq!(total.total_tokens, 17);
        assert_eq!(total.requests, 2);
    }

    #[test]
    fn redact_scrubs_secrets() {
        assert_eq!(redact("key sk-1 leaked", "sk-1"), "key [redacted] leaked");
        assert_eq!(redact("nothing here", ""), "nothing here");
    }
}
