use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::ContextSnippet;

pub const API_KEY_VAR: &str = "QACAL_API_KEY";
pub const STUB_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest<'a> {
    pub system: &'a str,
    pub user: &'a str,
    pub temperature: f64,
    pub model: &'a str,
}

/// Something that turns a chat request into raw response text.
pub trait Provider: Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, String>;

    /// Recorded in generated items.
    fn timestamp(&self) -> String;
}

/// Replays canned responses from a fixture directory. For snippet `s` the
/// n-th call (0-based) returns `s.n.json` when present, else `s.json`.
#[derive(Debug)]
pub struct StubProvider {
    dir: PathBuf,
    by_text: HashMap<String, String>,
    calls: Mutex<HashMap<String, usize>>,
}

impl StubProvider {
    pub fn new(dir: impl Into<PathBuf>, snippets: &[ContextSnippet]) -> Self {
        Self {
            dir: dir.into(),
            by_text: snippets.iter().map(|s| (s.text.clone(), s.id.clone())).collect(),
            calls: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Provider for StubProvider {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, String> {
        let id = self
            .by_text
            .get(request.user)
            .ok_or_else(|| "stub has no snippet with this text".to_string())?;
        let n = {
            let mut calls = self.calls.lock().expect("stub call counter poisoned");
            let c = calls.entry(id.clone()).or_insert(0);
            *c += 1;
            *c - 1
        };
        let numbered = self.dir.join(format!("{id}.{n}.json"));
        let path = if n > 0 && numbered.exists() {
            numbered
        } else {
            self.dir.join(format!("{id}.json"))
        };
        std::fs::read_to_string(&path).map_err(|e| format!("cannot read fixture {}: {e}", path.display()))
    }

    fn timestamp(&self) -> String {
        STUB_TIMESTAMP.to_string()
    }
}

/// OpenAI-style chat-completions client.
pub struct HttpProvider {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Reads the key from `QACAL_API_KEY`.
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, String> {
        match std::env::var(API_KEY_VAR) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(endpoint, key.trim(), timeout)),
            _ => Err(format!("the live provider needs the {API_KEY_VAR} environment variable")),
        }
    }
}

pub fn request_body(request: &ChatRequest<'_>) -> Value {
    json!({
        "model": request.model,
        "temperature": request.temperature,
        "response_format": {"type": "json_object"},
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": request.user},
        ],
    })
}

/// `choices[0].message.content` of a chat-completions response.
pub fn response_content(body: &Value) -> Result<String, String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| "response has no choices[0].message.content".to_string())
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request_body(request))
            .map_err(|e| format!("request failed: {e}"))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| format!("cannot read response body: {e}"))?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {text}"));
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| format!("response is not JSON: {e}"))?;
        response_content(&body)
    }

    fn timestamp(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}
