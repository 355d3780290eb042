use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_messages, BackendError, ChatMessage, Completion, ModelBackend, SamplingParams, TokenUsage};

/// Retries transport errors and HTTP 429/5xx with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): base, 2*base, 4*base, ...
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model_id: model_id.into(),
            api_key_env: None,
            timeout_secs: 600,
        }
    }
}

/// OpenAI-style `/chat/completions` client.
pub struct RemoteBackend {
    config: RemoteConfig,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
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
    Retry(String),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let base = config.base_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(RemoteBackend { config, url, api_key, retry: RetryPolicy::default(), agent })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let mut request = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}: {}", excerpt(&text)));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(BackendError::Http { status, body_excerpt: excerpt(&text) });
        }
        let parsed: WireResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(BackendError::MalformedResponse(e.to_string())),
        };
        let Some(content) = parsed.choices.into_iter().next().and_then(|c| c.message.content) else {
            return Attempt::Fatal(BackendError::MalformedResponse("no choices[0].message.content".into()));
        };
        let usage = parsed
            .usage
            .map(|u| TokenUsage::new(u.prompt_tokens, u.completion_tokens))
            .unwrap_or_default();
        Attempt::Done(Completion { text: content, usage })
    }
}

fn excerpt(body: &str) -> String {
    const LIMIT: usize = 500;
    match body.char_indices().nth(LIMIT) {
        Some((cut, _)) => format!("{}...", &body[..cut]),
        None => body.to_owned(),
    }
}

impl ModelBackend for RemoteBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn chat(&self, messages: &[ChatMessage], params: SamplingParams) -> Result<Completion, BackendError> {
        check_messages(messages)?;
        let body = json!({
            "model": self.config.model_id,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
        });
        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(completion) => return Ok(completion),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Retry(message) if retries >= self.retry.max_retries => {
                    return Err(BackendError::Transport { attempts: retries + 1, message })
                }
                Attempt::Retry(message) => {
                    log::warn!("{}: retrying after transient failure: {message}", self.config.model_id);
                    thread::sleep(self.retry.delay(retries));
                    retries += 1;
                }
            }
        }
    }
}
