//! Chat-completions client over HTTP.
//!
//! Speaks the common `/chat/completions` shape: the rendered prompt goes
//! in as the system message and the context as the user message.

use std::fmt;
use std::time::Duration;

use ambient_core::{BackendError, CompletionBackend};
use serde_json::{json, Value};

pub const ENDPOINT_VAR: &str = "AMBIENT_LLM_ENDPOINT";
pub const MODEL_VAR: &str = "AMBIENT_LLM_MODEL";
pub const API_KEY_VAR: &str = "AMBIENT_LLM_API_KEY";

pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    temperature: Option<f64>,
    agent: ureq::Agent,
}

// keeps the key out of logs and panics
impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            temperature: None,
            agent,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    /// Reads the endpoint, model and optional key from the environment.
    pub fn from_env() -> Result<Self, String> {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let endpoint = get(ENDPOINT_VAR).ok_or_else(|| format!("{ENDPOINT_VAR} is not set"))?;
        let model = get(MODEL_VAR).ok_or_else(|| format!("{MODEL_VAR} is not set"))?;
        Ok(Self::new(endpoint, model, get(API_KEY_VAR)))
    }

    fn body(&self, prompt: &str, context: &str) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt},
                {"role": "user", "content": context},
            ],
        });
        if let Some(t) = self.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

fn reply_text(v: &Value) -> Option<String> {
    v.pointer("/choices/0/message/content")
        .or_else(|| v.pointer("/choices/0/text"))
        .or_else(|| v.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str, context: &str) -> Result<String, BackendError> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.body(prompt, context))
            .map_err(|e| BackendError(format!("request failed: {e}")))?;
        let status = resp.status();
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError(format!("unreadable response ({status}): {e}")))?;
        if !status.is_success() {
            let detail = body
                .pointer("/error/message")
                .and_then(Value::as_str)
                .unwrap_or("no detail");
            return Err(BackendError(format!("endpoint returned {status}: {detail}")));
        }
        reply_text(&body).ok_or_else(|| BackendError("response has no completion text".into()))
    }

    fn name(&self) -> &str {
        &self.model
    }
}
