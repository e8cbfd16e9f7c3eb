use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest, ChatResponse, GatewayError, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    /// Substring of the last user message that selects this rule.
    pub contains: String,
    pub response: String,
}

/// Ordered substring rules plus an optional default reply.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default: Option<String>,
}

impl MockScript {
    pub fn rule(mut self, contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            contains: contains.into(),
            response: response.into(),
        });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(text).map_err(|e| GatewayError::Config(format!("mock script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("mock script {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn respond(&self, message: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| message.contains(&r.contains))
            .map(|r| r.response.as_str())
            .or(self.default.as_deref())
    }
}

/// Deterministic backend answering from a [`MockScript`].
pub struct MockBackend {
    script: MockScript,
    calls: Arc<AtomicUsize>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Shared counter of requests this backend has answered or refused.
    pub fn call_counter(&self) -> Arc<AtomicUsize> {
        self.calls.clone()
    }
}

impl Backend for MockBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request.last_user_message();
        let text = self.script.respond(prompt).ok_or(BackendError::Unmatched)?;
        Ok(ChatResponse {
            text: text.to_string(),
            model: request.model.clone(),
            usage: Usage {
                prompt_tokens: prompt.split_whitespace().count() as u64,
                completion_tokens: text.split_whitespace().count() as u64,
            },
        })
    }
}
