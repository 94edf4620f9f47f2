//! OpenAI-compatible `/chat/completions` backend.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendError, BackendReply, ChatBackend, ChatRequest};

pub const ENV_API_BASE: &str = "LOOPRANK_API_BASE";
pub const ENV_API_KEY: &str = "LOOPRANK_API_KEY";
pub const ENV_API_KEY_FALLBACK: &str = "OPENAI_API_KEY";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

pub struct OpenAiBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

impl OpenAiBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            api_key,
        }
    }

    /// Reads the endpoint and key from the environment.
    pub fn from_env() -> Self {
        let base = std::env::var(ENV_API_BASE).unwrap_or_else(|_| DEFAULT_API_BASE.to_owned());
        let key = std::env::var(ENV_API_KEY)
            .or_else(|_| std::env::var(ENV_API_KEY_FALLBACK))
            .ok()
            .filter(|k| !k.is_empty());
        Self::new(base, key, Duration::from_secs(120))
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    pub fn has_key(&self) -> bool {
        self.api_key.is_some()
    }
}

pub(crate) fn request_body(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
    });
    if let Some(limit) = request.max_output_tokens {
        body["max_tokens"] = json!(limit);
    }
    body
}

pub(crate) fn parse_reply(body: &Value) -> Result<BackendReply, BackendError> {
    let content = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    let usage = |field: &str| {
        body.pointer(&format!("/usage/{field}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(BackendReply {
        content: content.to_owned(),
        input_tokens: usage("prompt_tokens"),
        output_tokens: usage("completion_tokens"),
    })
}

impl ChatBackend for OpenAiBackend {
    fn chat(&self, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        let mut call = self
            .agent
            .post(&self.endpoint())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(request_body(request))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body: text });
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        parse_reply(&body)
    }
}
