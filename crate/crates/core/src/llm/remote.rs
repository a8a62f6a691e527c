//! Remote chat-completion client (OpenAI-compatible wire contract).

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{approx_token_count, LlmClient, LlmError, LlmRequest, LlmResponse, TokenBasis};

/// Blocking HTTP client for any endpoint speaking the chat-completion
/// protocol: `POST {base_url}/chat/completions` with `model`, `messages`,
/// `temperature`. Transient failures (429, 5xx, transport errors, timeouts)
/// are retried with exponential backoff, at most `max_attempts` attempts in
/// total. Authentication failures are not retried.
pub struct RemoteLlmClient {
    http: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    max_attempts: u32,
    backoff: Duration,
}

#[derive(Debug, Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    content: String,
}

#[derive(Debug, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

enum Failure {
    Retryable(String),
    TimedOut(String),
}

impl RemoteLlmClient {
    /// `base_url` without the trailing `/chat/completions` part. The API key
    /// is read from the `TABGR_LLM_API_KEY` environment variable unless one
    /// is passed explicitly.
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Unavailable(format!("http client: {e}")))?;
        Ok(RemoteLlmClient {
            http,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.or_else(|| std::env::var(super::API_KEY_ENV).ok()),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        })
    }

    pub fn with_max_attempts(mut self, attempts: u32) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    /// Base delay before the first retry; doubles per attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &LlmRequest) -> Result<Result<LlmResponse, Failure>, LlmError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        if let Some(max) = request.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let mut builder = self.http.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let started = Instant::now();
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Ok(Err(Failure::TimedOut(e.to_string()))),
            Err(e) => return Ok(Err(Failure::Retryable(e.to_string()))),
        };
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(LlmError::Auth(format!("{status}")));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Ok(Err(Failure::Retryable(format!("{status}"))));
        }
        if !status.is_success() {
            return Err(LlmError::InvalidResponse(format!("{status}")));
        }
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        let parsed: ChatCompletionResponse = response
            .json()
            .map_err(|e| LlmError::InvalidResponse(e.to_string()))?;
        let text = parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| LlmError::InvalidResponse("no choices in response".to_string()))?;
        let usage = parsed.usage.unwrap_or(Usage {
            prompt_tokens: None,
            completion_tokens: None,
        });
        // Provider-reported usage wins; fall back to the approximation.
        let (input_tokens, output_tokens, token_basis) =
            match (usage.prompt_tokens, usage.completion_tokens) {
                (Some(i), Some(o)) => (i, o, TokenBasis::Provider),
                _ => (
                    approx_token_count(&request.prompt),
                    approx_token_count(&text),
                    TokenBasis::ApproxCharsDiv4,
                ),
            };
        Ok(Ok(LlmResponse {
            text,
            input_tokens,
            output_tokens,
            token_basis,
            latency_ms,
        }))
    }
}

impl LlmClient for RemoteLlmClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut last_failure = None;
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(request)? {
                Ok(response) => return Ok(response),
                Err(failure) => {
                    log::warn!(
                        "llm attempt {}/{} failed: {}",
                        attempt + 1,
                        self.max_attempts,
                        match &failure {
                            Failure::Retryable(m) | Failure::TimedOut(m) => m.as_str(),
                        }
                    );
                    last_failure = Some(failure);
                }
            }
        }
        match last_failure {
            Some(Failure::TimedOut(m)) => Err(LlmError::Timeout(m)),
            Some(Failure::Retryable(m)) => {
                Err(LlmError::Unavailable(format!("retries exhausted: {m}")))
            }
            None => Err(LlmError::Unavailable("no attempts made".to_string())),
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}
