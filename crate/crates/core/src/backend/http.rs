//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendResponse, ChatBackend, CompletionRequest, Usage};
use crate::prompt::ChatTurn;

pub struct OpenAiBackend {
    id: String,
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatTurn],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
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

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl OpenAiBackend {
    /// `base_url` is the API root, e.g. `https://api.openai.com/v1`.
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let base = base_url.trim_end_matches('/');
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            id: format!("openai:{base}"),
            url: format!("{base}/chat/completions"),
            api_key,
            agent,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

fn transport(message: String, retryable: bool) -> BackendError {
    BackendError::Transport { message, retryable }
}

pub(crate) fn parse_body(body: &str) -> Result<BackendResponse, BackendError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Schema(e.to_string()))?;
    let first = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Schema("response has no choices".into()))?;
    let text = first
        .message
        .content
        .ok_or_else(|| BackendError::Schema("choice has no message content".into()))?;
    Ok(BackendResponse {
        text,
        usage: wire.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
    })
}

impl ChatBackend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &CompletionRequest) -> Result<BackendResponse, BackendError> {
        let body = WireRequest {
            model: &request.model,
            messages: &request.turns,
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| transport(e.to_string(), true))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(e.to_string(), true))?;
        match status {
            200..=299 => parse_body(&text),
            429 | 500..=599 => Err(transport(format!("HTTP {status}"), true)),
            _ => Err(transport(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()), false)),
        }
    }
}
