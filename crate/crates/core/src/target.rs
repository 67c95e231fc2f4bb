//! Model endpoint descriptions.

use serde::{Deserialize, Serialize};

/// How to pull a reasoning trace out of a completion when the provider
/// does not use a dedicated response field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningDelimiters {
    pub open: String,
    pub close: String,
}

/// One model under evaluation (or serving as the judge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTarget {
    /// Display identifier; also the rate-limiter key.
    pub name: String,
    /// Base URL of a chat-completion-style HTTP API.
    pub endpoint: String,
    /// Provider-side model name.
    pub model_id: String,
    /// Zero-shot protocol runs at temperature 0 unless overridden.
    #[serde(default)]
    pub temperature: f64,
    /// Whether the model exposes intermediate reasoning traces. Targets
    /// without traces are scheduled only for AE and AF.
    #[serde(default)]
    pub trace_visible: bool,
    /// Name of the environment variable holding the API credential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_ref: Option<String>,
    /// Inline trace delimiters, e.g. `<think>`/`</think>`, for providers
    /// that interleave thinking with the final content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_delimiters: Option<ReasoningDelimiters>,
    /// Marks the local deterministic mock; prompts for mock targets get a
    /// trailing metadata line so the mock can look up the problem.
    #[serde(default)]
    pub mock: bool,
}

impl ModelTarget {
    pub fn new(name: &str, endpoint: &str, model_id: &str) -> Self {
        ModelTarget {
            name: name.to_string(),
            endpoint: endpoint.to_string(),
            model_id: model_id.to_string(),
            temperature: 0.0,
            trace_visible: false,
            auth_ref: None,
            reasoning_delimiters: None,
            mock: false,
        }
    }

    pub fn with_trace_visible(mut self, visible: bool) -> Self {
        self.trace_visible = visible;
        self
    }

    pub fn as_mock(mut self) -> Self {
        self.mock = true;
        self
    }
}
