use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, GenerationRequest, StepKey};

/// Request shape sent to the service.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiKind {
    /// `{model, messages: [{role, content}], ...}` answered by
    /// `choices[0].message.content`.
    #[default]
    Chat,
    /// `{model, prompt, ...}` answered by `choices[0].text`.
    Completion,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// Maximum number of requests in flight.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
    #[serde(default)]
    pub api: ApiKind,
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_attempts() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_backoff_max_ms() -> u64 {
    8_000
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            model: model.into(),
            auth_env: None,
            timeout_ms: default_timeout_ms(),
            max_attempts: default_max_attempts(),
            concurrency: default_concurrency(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_max_ms: default_backoff_max_ms(),
            api: ApiKind::Chat,
        }
    }

    /// Delay before retry number `attempt` (1-based), doubling from the base
    /// and capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    free: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.released.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.released.notify_one();
    }
}

/// Client for a hosted chat-completion style endpoint.
pub struct RemoteBackend {
    config: RemoteConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
    permits: Permits,
}

enum Attempt {
    Done(String),
    Retry(BackendError),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        if config.max_attempts == 0 {
            return Err(BackendError::Config("max_attempts must be at least 1".into()));
        }
        if config.concurrency == 0 {
            return Err(BackendError::Config("concurrency must be at least 1".into()));
        }
        let token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(RemoteBackend {
            permits: Permits {
                free: Mutex::new(config.concurrency),
                released: Condvar::new(),
            },
            config,
            token,
            client,
        })
    }

    fn body(&self, request: &GenerationRequest) -> Value {
        let mut body = match self.config.api {
            ApiKind::Chat => json!({
                "model": self.config.model,
                "messages": [{"role": "user", "content": request.prompt}],
            }),
            ApiKind::Completion => json!({
                "model": self.config.model,
                "prompt": request.prompt,
            }),
        };
        body["temperature"] = json!(request.temperature);
        body["max_tokens"] = json!(request.max_new_tokens);
        if !request.stop.is_empty() {
            body["stop"] = json!(request.stop);
        }
        body
    }

    fn extract(&self, response: &Value) -> Option<String> {
        let choice = response.get("choices")?.get(0)?;
        let text = match self.config.api {
            ApiKind::Chat => choice.get("message")?.get("content")?,
            ApiKind::Completion => choice.get("text")?,
        };
        text.as_str().map(str::to_string)
    }

    fn attempt(&self, body: &Value, attempt: u32) -> Attempt {
        let mut call = self.client.post(&self.config.url).json(body);
        if let Some(token) = &self.token {
            call = call.bearer_auth(token);
        }
        let response = match call.send() {
            Ok(r) => r,
            Err(e) => {
                let detail = if e.is_timeout() { format!("timeout: {e}") } else { e.to_string() };
                return Attempt::Retry(BackendError::Transport { attempts: attempt, detail });
            }
        };
        let status = response.status();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    attempts: attempt,
                    detail: e.to_string(),
                })
            }
        };
        if !status.is_success() {
            return Attempt::Retry(BackendError::Status {
                status: status.as_u16(),
                attempts: attempt,
                body: text.chars().take(200).collect(),
            });
        }
        let parsed = serde_json::from_str::<Value>(&text).ok().and_then(|v| self.extract(&v));
        match parsed {
            Some(s) => Attempt::Done(s),
            None => Attempt::Fatal(BackendError::Response(text.chars().take(200).collect())),
        }
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn generate(&self, request: &GenerationRequest, _: &StepKey) -> Result<String, BackendError> {
        let _permit = self.permits.acquire();
        let body = self.body(request);
        let mut attempt = 1;
        loop {
            match self.attempt(&body, attempt) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.config.max_attempts => return Err(e),
                Attempt::Retry(e) => {
                    let delay = self.config.backoff(attempt);
                    tracing::debug!(attempt, ?delay, error = %e, "retrying request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}
