use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::{blocks, CompletionRequest, ProviderConfig, ProviderError, ProviderMode};
use crate::net;

/// Approximate token count: one token per four characters, rounded up.
pub fn approx_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn check_budget(prompt: &str, limit: usize) -> Result<(), ProviderError> {
    let tokens = approx_tokens(prompt);
    if tokens > limit {
        return Err(ProviderError::BudgetExceeded { tokens, limit });
    }
    Ok(())
}

pub trait CompletionProvider: Send + Sync {
    fn mode(&self) -> ProviderMode;
    /// Prompt budget in approximate tokens.
    fn prompt_budget(&self) -> usize;
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

/// Builds the provider described by `config`.
pub fn provider_from_config(config: &ProviderConfig) -> Result<Arc<dyn CompletionProvider>, ProviderError> {
    config.check()?;
    Ok(match config.mode {
        ProviderMode::Mock => Arc::new(MockProvider::new(config.max_prompt_tokens)),
        ProviderMode::Remote => Arc::new(RemoteProvider::new(config.clone())),
    })
}

/// One-shot completion against the provider described by `config`.
pub fn complete(config: &ProviderConfig, request: &CompletionRequest) -> Result<String, ProviderError> {
    provider_from_config(config)?.complete(request)
}

/// Deterministic offline provider. Output depends only on the prompt's
/// sentinel blocks:
///
/// * `EXISTING_ANSWER` present: the existing answer followed by
///   `; refined with: <title>` for each context document.
/// * otherwise, with context documents `A, B`: `Based on: A; B.` followed by
///   the first sentence of each document body.
/// * no context: `I do not know.`
#[derive(Debug, Clone)]
pub struct MockProvider {
    max_prompt_tokens: usize,
}

impl MockProvider {
    pub fn new(max_prompt_tokens: usize) -> Self {
        Self { max_prompt_tokens }
    }
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new(ProviderConfig::default().max_prompt_tokens)
    }
}

/// Leading sentence of `body`: up to the first `.`, `!` or `?` that ends a
/// word, and never past the first line.
pub fn first_sentence(body: &str) -> &str {
    let line = body.trim_start().lines().next().unwrap_or("").trim_end();
    let bytes = line.as_bytes();
    for (i, c) in line.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            if end == bytes.len() || bytes[end].is_ascii_whitespace() {
                return &line[..end];
            }
        }
    }
    line
}

impl CompletionProvider for MockProvider {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Mock
    }

    fn prompt_budget(&self) -> usize {
        self.max_prompt_tokens
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        request.check()?;
        check_budget(&request.prompt, self.max_prompt_tokens)?;
        let docs = blocks::extract(&request.prompt, blocks::CONTEXT).map(blocks::documents).unwrap_or_default();

        if let Some(existing) = blocks::extract(&request.prompt, blocks::EXISTING_ANSWER) {
            let mut out = existing.trim().to_string();
            for (title, _) in &docs {
                out.push_str("; refined with: ");
                out.push_str(title);
            }
            return Ok(out);
        }
        if docs.is_empty() {
            return Ok("I do not know.".to_string());
        }
        let titles: Vec<&str> = docs.iter().map(|(t, _)| t.as_str()).collect();
        let mut out = format!("Based on: {}.", titles.join("; "));
        for (_, body) in &docs {
            let sentence = first_sentence(body);
            if !sentence.is_empty() {
                out.push(' ');
                out.push_str(sentence);
            }
        }
        Ok(out)
    }
}

/// Counting gate bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Chat-completions client: `POST {endpoint}` with
/// `{model, messages: [{role, content}], max_tokens, temperature}`; the text
/// of the first choice is returned.
#[derive(Debug)]
pub struct RemoteProvider {
    config: ProviderConfig,
    gate: Gate,
}

impl RemoteProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let cap = config.max_concurrent.max(1);
        Self { config, gate: Gate { in_flight: Mutex::new(0), freed: Condvar::new(), cap } }
    }

    fn api_key(&self) -> Option<String> {
        self.config.auth.as_deref().and_then(|var| std::env::var(var).ok())
    }
}

impl CompletionProvider for RemoteProvider {
    fn mode(&self) -> ProviderMode {
        ProviderMode::Remote
    }

    fn prompt_budget(&self) -> usize {
        self.config.max_prompt_tokens
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        request.check()?;
        check_budget(&request.prompt, self.config.max_prompt_tokens)?;
        let endpoint = self
            .config
            .endpoint
            .as_deref()
            .ok_or_else(|| ProviderError::InvalidConfig("remote mode requires an endpoint".into()))?;
        let body = serde_json::json!({
            "model": self.config.model_name.as_deref().unwrap_or("gpt-3.5-turbo"),
            "messages": [{ "role": "user", "content": request.prompt }],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });

        let _permit = self.gate.acquire();
        let (status, text) = net::post_json(
            endpoint,
            self.api_key().as_deref(),
            &body,
            Duration::from_secs(self.config.timeout_secs),
        )
        .map_err(|e| ProviderError::ProviderUnavailable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::ProviderError { status, body: text });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let choice = &value["choices"][0];
        choice["message"]["content"]
            .as_str()
            .or_else(|| choice["text"].as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError::MalformedResponse("no text in choices[0]".into()))
    }
}
