//! Deterministic scripted client for offline runs and tests.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{approx_token_count, LlmClient, LlmError, LlmRequest, LlmResponse, TokenBasis};

/// One script rule: if `pattern` occurs in the rendered prompt, reply with
/// `response`. Among matching rules the longest pattern wins (first in file
/// order on ties), so an empty pattern acts as a catch-all.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub pattern: String,
    pub response: String,
}

/// Scripted mock client. Performs no network activity; token usage comes
/// from the approximate tokenizer.
pub struct MockLlmClient {
    entries: Vec<ScriptEntry>,
    calls: AtomicU64,
}

impl MockLlmClient {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        MockLlmClient {
            entries,
            calls: AtomicU64::new(0),
        }
    }

    /// Load a script from a JSON file: an array of `{pattern, response}`.
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Unavailable(format!("read {}: {e}", path.display())))?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| LlmError::InvalidResponse(format!("script {}: {e}", path.display())))?;
        Ok(MockLlmClient::new(entries))
    }

    /// Convenience constructor from `(pattern, response)` pairs.
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        MockLlmClient::new(
            pairs
                .iter()
                .map(|(p, r)| ScriptEntry {
                    pattern: p.to_string(),
                    response: r.to_string(),
                })
                .collect(),
        )
    }

    /// Total completions served so far.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for MockLlmClient {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let best = self
            .entries
            .iter()
            .filter(|e| request.prompt.contains(&e.pattern))
            .max_by_key(|e| e.pattern.len());
        match best {
            Some(entry) => Ok(LlmResponse {
                text: entry.response.clone(),
                input_tokens: approx_token_count(&request.prompt),
                output_tokens: approx_token_count(&entry.response),
                token_basis: TokenBasis::ApproxCharsDiv4,
                latency_ms: 0.0,
            }),
            None => Err(LlmError::Unavailable(
                "no script pattern matched the prompt".to_string(),
            )),
        }
    }

    fn name(&self) -> &str {
        "mock"
    }
}
