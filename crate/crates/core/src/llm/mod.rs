//! Provider-agnostic LLM boundary.
//!
//! Everything upstream of this module talks to a [`LlmClient`]: either the
//! remote chat-completion client ([`remote::RemoteLlmClient`]) or the
//! deterministic scripted mock ([`mock::MockLlmClient`]) used for offline
//! runs and tests. Prompt construction lives in [`template`], token
//! accounting in [`usage`].

pub mod mock;
pub mod remote;
pub mod template;
pub mod usage;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{MockLlmClient, ScriptEntry};
pub use remote::RemoteLlmClient;
pub use template::{PromptKind, PromptLibrary};
pub use usage::{UsageLedger, UsageSnapshot};

/// Environment variable holding the remote API credential.
pub const API_KEY_ENV: &str = "TABGR_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("llm unavailable: {0}")]
    Unavailable(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("unbound placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

/// Where a token count came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenBasis {
    /// Counts reported by the provider.
    Provider,
    /// `ceil(chars / 4)` fallback.
    ApproxCharsDiv4,
}

#[derive(Debug, Clone)]
pub struct LlmRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub kind: PromptKind,
}

impl LlmRequest {
    /// Greedy-decoding request (temperature 0), the default everywhere.
    pub fn new(model: impl Into<String>, prompt: impl Into<String>, kind: PromptKind) -> Self {
        LlmRequest {
            model: model.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: None,
            kind,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LlmResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub token_basis: TokenBasis,
    pub latency_ms: f64,
}

/// A chat-completion backend. Implementations must be safe for concurrent
/// calls; the evaluation harness shares one client across its worker pool.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError>;
    fn name(&self) -> &str;
}

/// Approximate token count: `ceil(chars / 4)`.
pub fn approx_token_count(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// One rendered-prompt exchange bound to a question and a ledger.
///
/// Bundles the client, prompt library, model settings, and optional usage
/// ledger so pipeline stages can say `session.ask(kind, bindings)` without
/// threading five arguments around.
pub struct LlmSession<'a> {
    client: &'a dyn LlmClient,
    prompts: &'a PromptLibrary,
    model: String,
    temperature: f64,
    ledger: Option<&'a UsageLedger>,
    question_id: String,
}

impl<'a> LlmSession<'a> {
    pub fn new(
        client: &'a dyn LlmClient,
        prompts: &'a PromptLibrary,
        model: impl Into<String>,
        ledger: Option<&'a UsageLedger>,
        question_id: impl Into<String>,
    ) -> Self {
        LlmSession {
            client,
            prompts,
            model: model.into(),
            temperature: 0.0,
            ledger,
            question_id: question_id.into(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Render the prompt for `kind`, send it, record usage, return the text.
    pub fn ask(&self, kind: PromptKind, bindings: &[(&str, &str)]) -> Result<String, LlmError> {
        let prompt = self.prompts.render(kind, bindings)?;
        let mut request = LlmRequest::new(self.model.clone(), prompt, kind);
        request.temperature = self.temperature;
        let response = self.client.complete(&request)?;
        if let Some(ledger) = self.ledger {
            ledger.record(
                &self.question_id,
                kind,
                response.input_tokens,
                response.output_tokens,
            );
        }
        Ok(response.text)
    }
}
