use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatMessage, ChatRequest, ChatResponse, GatewayError, Usage};

const CHAT_PATH: &str = "/v1/chat/completions";

/// OpenAI-compatible `POST /v1/chat/completions` client.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    /// `endpoint` is either a base URL or a full chat-completions URL.
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let endpoint = endpoint.trim_end_matches('/');
        if endpoint.is_empty() {
            return Err(GatewayError::Config("empty endpoint".into()));
        }
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else if endpoint.ends_with("/v1") {
            format!("{endpoint}/chat/completions")
        } else {
            format!("{endpoint}{CHAT_PATH}")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { client, url, api_key })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

impl Backend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transport(format!("undecodable response: {e}")))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Transport("response has no choices".into()))?
            .message
            .content
            .unwrap_or_default();
        Ok(ChatResponse {
            text: content,
            model: wire.model.unwrap_or_else(|| request.model.clone()),
            usage: wire.usage.unwrap_or_default(),
        })
    }
}
