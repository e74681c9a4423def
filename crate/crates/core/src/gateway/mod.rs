//! Text-completion gateway: request/config types, prompt templates, the
//! sentinel block format shared with the mock provider, and the providers.

mod provider;
pub mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use provider::{
    approx_tokens, complete, first_sentence, provider_from_config, CompletionProvider, MockProvider, RemoteProvider,
};
pub use template::{bundled, PromptTemplate, TemplateError, TEMPLATE_VERSION};

pub const DEFAULT_MAX_TOKENS: u32 = 1920;
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
/// Context window assumed for the prompt budget (prompt + completion).
pub const DEFAULT_CONTEXT_WINDOW: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), max_tokens: DEFAULT_MAX_TOKENS, temperature: DEFAULT_TEMPERATURE }
    }

    pub fn with_limits(prompt: impl Into<String>, max_tokens: u32, temperature: f64) -> Self {
        Self { prompt: prompt.into(), max_tokens, temperature }
    }

    pub fn check(&self) -> Result<(), ProviderError> {
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ProviderError::InvalidRequest("temperature must be a non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Mock,
    Remote,
}

impl std::str::FromStr for ProviderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mock" => Ok(ProviderMode::Mock),
            "remote" => Ok(ProviderMode::Remote),
            other => Err(format!("unknown provider mode `{other}` (expected mock or remote)")),
        }
    }
}

impl ProviderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderMode::Mock => "mock",
            ProviderMode::Remote => "remote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Chat-completions URL, required in remote mode.
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth: Option<String>,
    /// Prompt budget in approximate tokens (characters / 4).
    pub max_prompt_tokens: usize,
    /// Cap on in-flight remote requests.
    pub max_concurrent: usize,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Mock,
            endpoint: None,
            model_name: None,
            auth: None,
            max_prompt_tokens: DEFAULT_CONTEXT_WINDOW - DEFAULT_MAX_TOKENS as usize,
            max_concurrent: 4,
            timeout_secs: 60,
        }
    }
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self { mode: ProviderMode::Remote, endpoint: Some(endpoint.into()), ..Self::default() }
    }

    pub fn check(&self) -> Result<(), ProviderError> {
        if self.mode == ProviderMode::Remote && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(ProviderError::InvalidConfig("remote mode requires an endpoint".into()));
        }
        if self.max_prompt_tokens == 0 || self.max_concurrent == 0 {
            return Err(ProviderError::InvalidConfig(
                "max_prompt_tokens and max_concurrent must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider returned status {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("prompt needs about {tokens} tokens, budget is {limit}")]
    BudgetExceeded { tokens: usize, limit: usize },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

impl ProviderError {
    pub fn code(&self) -> &'static str {
        match self {
            ProviderError::ProviderUnavailable(_) => "PROVIDER_UNAVAILABLE",
            ProviderError::ProviderError { .. } => "PROVIDER_ERROR",
            ProviderError::BudgetExceeded { .. } => "BUDGET_EXCEEDED",
            ProviderError::MalformedResponse(_) => "MALFORMED_RESPONSE",
            ProviderError::InvalidRequest(_) => "INVALID_REQUEST",
            ProviderError::InvalidConfig(_) => "INVALID_CONFIG",
        }
    }
}

/// Machine-readable prompt blocks. Each block starts with `NAME:` on its own
/// line and ends with `END NAME`. Inside `CONTEXT`, every document begins with
/// a `## DOC: <title>` line followed by its body lines.
pub mod blocks {
    pub const CONTEXT: &str = "CONTEXT";
    pub const EXISTING_ANSWER: &str = "EXISTING_ANSWER";
    pub const QUESTION: &str = "QUESTION";
    pub const METHOD_STEPS: &str = "METHOD_STEPS";
    pub const DOC_HEADER: &str = "## DOC: ";

    /// Wraps `content` in a sentinel block, with surrounding newlines so it can
    /// be dropped into running template text.
    pub fn wrap(name: &str, content: &str) -> String {
        format!("\n{name}:\n{}\nEND {name}\n", content.trim_end())
    }

    /// Builds a CONTEXT block from `(title, body)` pairs.
    pub fn context<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
        let content: Vec<String> = docs
            .into_iter()
            .map(|(title, body)| format!("{DOC_HEADER}{}\n{}", one_line(title), body.trim_end()))
            .collect();
        wrap(CONTEXT, &content.join("\n"))
    }

    fn one_line(s: &str) -> String {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    /// Content of the first `name` block, if present and closed.
    pub fn extract<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
        let open = format!("{name}:\n");
        let close = format!("\nEND {name}");
        let start = prompt.find(&open)? + open.len();
        let end = prompt[start..].find(&close)? + start;
        Some(&prompt[start..end])
    }

    /// `(title, body)` pairs of a CONTEXT block's content.
    pub fn documents(context: &str) -> Vec<(String, String)> {
        let mut docs: Vec<(String, Vec<&str>)> = Vec::new();
        for line in context.lines() {
            if let Some(title) = line.strip_prefix(DOC_HEADER) {
                docs.push((title.trim().to_string(), Vec::new()));
            } else if let Some((_, body)) = docs.last_mut() {
                body.push(line);
            }
        }
        docs.into_iter().map(|(t, b)| (t, b.join("\n"))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_defaults() {
        let r = CompletionRequest::new("hi");
        assert_eq!(r.max_tokens, 1920);
        assert_eq!(r.temperature, 0.0);
        assert!(r.check().is_ok());
        assert!(CompletionRequest::with_limits("x", 0, 0.0).check().is_err());
        assert!(CompletionRequest::with_limits("x", 5, -1.0).check().is_err());
    }

    #[test]
    fn remote_requires_endpoint() {
        let cfg = ProviderConfig { mode: ProviderMode::Remote, ..ProviderConfig::default() };
        assert!(matches!(cfg.check(), Err(ProviderError::InvalidConfig(_))));
        assert!(ProviderConfig::remote("http://localhost:1/v1/chat/completions").check().is_ok());
        assert!(ProviderConfig::mock().check().is_ok());
    }

    #[test]
    fn block_round_trip() {
        let ctx = blocks::context([("Ask-TMK", "Explanation module.\nRelations: none"), ("User", "A person.")]);
        let prompt = format!("preamble{ctx}tail");
        let inner = blocks::extract(&prompt, blocks::CONTEXT).unwrap();
        assert_eq!(
            blocks::documents(inner),
            vec![
                ("Ask-TMK".to_string(), "Explanation module.\nRelations: none".to_string()),
                ("User".to_string(), "A person.".to_string())
            ]
        );
        assert_eq!(blocks::extract(&prompt, blocks::EXISTING_ANSWER), None);
    }
}
