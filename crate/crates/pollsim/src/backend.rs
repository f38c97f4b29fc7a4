//! Chat-completion backends and cost accounting.
//!
//! The live backend POSTs a `{model, messages, temperature}` JSON body to a
//! chat-completions HTTP endpoint and reads back the first choice's message
//! content plus usage token counts. Every call sends exactly the two-message
//! conversation `[system, user]`; no conversational state is carried between
//! calls, so responses are sampled independently. Transport failures, timeouts
//! and HTTP 429 are retried with exponential backoff (429 honors a
//! `Retry-After` hint); other 4xx responses are fatal and surfaced with the
//! response body. A semaphore bounds in-flight requests to `max_in_flight`
//! regardless of how many worker threads call in.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::PromptContext;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    /// Non-retryable HTTP failure (4xx other than 429).
    #[error("request failed with HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request failed after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("mock model has no entry for question `{0}`")]
    UnknownQuestion(String),
    #[error("mock model has no ideology mean for question `{question}`, ideology `{ideology}`")]
    MissingIdeologyMean { question: String, ideology: String },
}

impl BackendError {
    /// Fatal errors abort a run; non-fatal ones are recorded as failed tasks.
    pub fn is_fatal(&self) -> bool {
        !matches!(
            self,
            BackendError::RetriesExhausted { .. } | BackendError::MalformedResponse(_)
        )
    }
}

/// Configuration for the live chat-completions backend. The credential itself
/// is never stored here; it is read from the named environment variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: u32,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_credential_env")]
    pub credential_env: String,
    /// First backoff delay; doubles per retry, capped at 30s.
    #[serde(default = "default_retry_delay_ms")]
    pub retry_initial_delay_ms: u64,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_max_in_flight() -> u32 {
    8
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_credential_env() -> String {
    "OPENAI_API_KEY".to_string()
}
fn default_retry_delay_ms() -> u64 {
    500
}

const MAX_BACKOFF: Duration = Duration::from_secs(30);

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight < 1 {
            return Err(BackendError::InvalidConfig(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::InvalidConfig(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One completion plus its accounting metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// `"live"` or `"mock"`.
    pub backend_id: String,
    pub latency: Duration,
}

/// A completion source the runner can drive from many worker threads.
pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> &'static str;
    fn model_name(&self) -> String;
    fn complete(&self, ctx: &PromptContext, replicate: u32)
        -> Result<CompletionResult, BackendError>;
}

/// Per-token prices in USD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub prompt_usd_per_token: f64,
    pub completion_usd_per_token: f64,
}

impl PriceTable {
    /// GPT-3.5-turbo pricing as of early 2023: $0.002 per 1K tokens for both
    /// prompt and completion.
    pub fn gpt35_turbo_2023() -> Self {
        Self {
            prompt_usd_per_token: 0.002 / 1000.0,
            completion_usd_per_token: 0.002 / 1000.0,
        }
    }
}

impl Default for PriceTable {
    fn default() -> Self {
        Self::gpt35_turbo_2023()
    }
}

/// Total cost of a set of completions: `sum(prompt_tokens * rate_in +
/// completion_tokens * rate_out)`.
pub fn estimate_cost<'a>(
    results: impl IntoIterator<Item = &'a CompletionResult>,
    prices: &PriceTable,
) -> f64 {
    assert!(prices.prompt_usd_per_token >= 0.0 && prices.completion_usd_per_token >= 0.0);
    results
        .into_iter()
        .map(|r| {
            r.prompt_tokens as f64 * prices.prompt_usd_per_token
                + r.completion_tokens as f64 * prices.completion_usd_per_token
        })
        .sum()
}

/// Counting semaphore bounding concurrent live requests.
struct Semaphore {
    permits: Mutex<u32>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: u32) -> Self {
        Self {
            permits: Mutex::new(permits),
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
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Live chat-completions client.
pub struct LiveBackend {
    config: BackendConfig,
    credential: String,
    client: reqwest::blocking::Client,
    semaphore: Semaphore,
}

impl LiveBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let credential = std::env::var(&config.credential_env)
            .map_err(|_| BackendError::MissingCredential(config.credential_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        let semaphore = Semaphore::new(config.max_in_flight);
        Ok(Self {
            config,
            credential,
            client,
            semaphore,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn backoff_delay(&self, attempt: u32) -> Duration {
        let base = Duration::from_millis(self.config.retry_initial_delay_ms);
        base.saturating_mul(2u32.saturating_pow(attempt)).min(MAX_BACKOFF)
    }

    fn send_once(&self, ctx: &PromptContext) -> Result<CompletionResult, AttemptError> {
        let request = ChatRequest {
            model: &self.config.model_name,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &ctx.rendered_system,
                },
                ChatMessage {
                    role: "user",
                    content: &ctx.rendered_user,
                },
            ],
            temperature: self.config.temperature,
        };
        let started = Instant::now();
        let response = self
            .client
            .post(&self.config.endpoint_url)
            .bearer_auth(&self.credential)
            .json(&request)
            .send()
            .map_err(|e| AttemptError::Retryable {
                message: e.to_string(),
                retry_after: None,
            })?;

        let status = response.status();
        if status.as_u16() == 429 {
            let retry_after = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(AttemptError::Retryable {
                message: "HTTP 429 rate limited".into(),
                retry_after,
            });
        }
        if status.is_server_error() {
            return Err(AttemptError::Retryable {
                message: format!("HTTP {}", status.as_u16()),
                retry_after: None,
            });
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(AttemptError::Fatal(BackendError::Http {
                status: status.as_u16(),
                body,
            }));
        }

        let body: ChatResponse = response.json().map_err(|e| {
            AttemptError::Fatal(BackendError::MalformedResponse(e.to_string()))
        })?;
        let choice = body.choices.into_iter().next().ok_or_else(|| {
            AttemptError::Fatal(BackendError::MalformedResponse("no choices".into()))
        })?;
        let usage = body.usage.unwrap_or_default();
        Ok(CompletionResult {
            text: choice.message.content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            backend_id: "live".to_string(),
            latency: started.elapsed(),
        })
    }
}

enum AttemptError {
    Retryable {
        message: String,
        retry_after: Option<Duration>,
    },
    Fatal(BackendError),
}

impl CompletionBackend for LiveBackend {
    fn id(&self) -> &'static str {
        "live"
    }

    fn model_name(&self) -> String {
        self.config.model_name.clone()
    }

    fn complete(
        &self,
        ctx: &PromptContext,
        _replicate: u32,
    ) -> Result<CompletionResult, BackendError> {
        let _permit = self.semaphore.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            match self.send_once(ctx) {
                Ok(result) => return Ok(result),
                Err(AttemptError::Fatal(err)) => return Err(err),
                Err(AttemptError::Retryable {
                    message,
                    retry_after,
                }) => {
                    last_error = message;
                    if attempt + 1 < attempts {
                        std::thread::sleep(
                            retry_after.unwrap_or_else(|| self.backoff_delay(attempt)),
                        );
                    }
                }
            }
        }
        Err(BackendError::RetriesExhausted {
            attempts,
            last_error,
        })
    }
}
