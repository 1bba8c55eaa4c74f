//! Model providers: a scripted offline mock and an HTTP client for
//! chat-completion style APIs.

use std::collections::{HashMap, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{GatewayError, VisionRequest};

/// What a provider returned for one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderReply {
    pub body: String,
    /// `None` when the provider does not report usage.
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

/// Why an attempt failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderFailure {
    /// Worth retrying: timeouts, rate limits, 5xx.
    Transient(String),
    Auth(String),
    /// Not worth retrying.
    Fatal(String),
}

pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &VisionRequest) -> Result<ProviderReply, ProviderFailure>;
}

/// Key under which the mock looks up replies for requests carrying an image:
/// `img-` followed by the first 16 hex digits of SHA-256 over the base64 text.
pub fn image_key(image_b64: &str) -> String {
    let digest = Sha256::digest(image_b64.as_bytes());
    format!("img-{}", &hex::encode(digest)[..16])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockStep {
    Reply(String),
    /// A transient failure; the gateway will retry.
    Fail(String),
    Auth(String),
}

/// Offline provider driven by fixtures.
///
/// A request is answered by the first match among: a scripted step queue for
/// its request id, a scripted queue for its image key, a fixture reply for its
/// request id, a fixture reply for its image key. Anything else is a fatal
/// failure. Every call is recorded, and appended to the audit file if one is set.
#[derive(Debug, Default)]
pub struct MockProvider {
    replies: HashMap<String, String>,
    scripts: Mutex<HashMap<String, VecDeque<MockStep>>>,
    calls: Mutex<Vec<String>>,
    audit: Option<PathBuf>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every regular file in `dir` as a reply keyed by its file stem.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref();
        let mut mock = Self::new();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| GatewayError::Config(format!("fixture directory {}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry?.path();
            if !path.is_file() {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            mock.replies.insert(stem.to_string(), std::fs::read_to_string(&path)?);
        }
        Ok(mock)
    }

    pub fn with_reply(mut self, key: impl Into<String>, body: impl Into<String>) -> Self {
        self.replies.insert(key.into(), body.into());
        self
    }

    pub fn with_script(self, key: impl Into<String>, steps: impl IntoIterator<Item = MockStep>) -> Self {
        self.scripts.lock().expect("mock lock").insert(key.into(), steps.into_iter().collect());
        self
    }

    /// Appends one line per call (`request_id`) to `path`.
    pub fn with_audit_log(mut self, path: impl Into<PathBuf>) -> Self {
        self.audit = Some(path.into());
        self
    }

    /// Request ids of all calls so far, in order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().expect("mock lock").clone()
    }

    fn keys(request: &VisionRequest) -> Vec<String> {
        let mut keys = vec![request.request_id.clone()];
        if let Some(img) = &request.image_b64 {
            keys.push(image_key(img));
        }
        keys
    }

    fn tokens(text: &str) -> u64 {
        text.chars().count().div_ceil(4) as u64
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &VisionRequest) -> Result<ProviderReply, ProviderFailure> {
        self.calls.lock().expect("mock lock").push(request.request_id.clone());
        if let Some(path) = &self.audit {
            let line = format!("{}\n", request.request_id);
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| ProviderFailure::Fatal(format!("mock audit log: {e}")))?;
        }

        let keys = Self::keys(request);
        let step = {
            let mut scripts = self.scripts.lock().expect("mock lock");
            keys.iter().find_map(|k| scripts.get_mut(k).and_then(VecDeque::pop_front))
        };
        let body = match step {
            Some(MockStep::Reply(body)) => body,
            Some(MockStep::Fail(msg)) => return Err(ProviderFailure::Transient(msg)),
            Some(MockStep::Auth(msg)) => return Err(ProviderFailure::Auth(msg)),
            None => match keys.iter().find_map(|k| self.replies.get(k)) {
                Some(body) => body.clone(),
                None => return Err(ProviderFailure::Fatal(format!("no mock fixture for any of {}", keys.join(", ")))),
            },
        };
        let image_tokens = request.image_b64.as_ref().map_or(0, |i| i.len() as u64 / 1000);
        Ok(ProviderReply {
            input_tokens: Some(Self::tokens(&request.prompt) + image_tokens),
            output_tokens: Some(Self::tokens(&body)),
            body,
        })
    }
}

/// Request/response dialect of an HTTP provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiFlavor {
    /// `POST {endpoint}` with `messages[].content[]` parts and `usage.prompt_tokens`.
    OpenAiChat,
    /// `POST {endpoint}` with `x-api-key` and `usage.input_tokens`.
    AnthropicMessages,
}

/// HTTP client for hosted vision models. The credential is read from
/// `FRAKTUR_<PROVIDER>_KEY` at call time.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    provider_id: String,
    endpoint: String,
    flavor: ApiFlavor,
    timeout: Duration,
}

impl HttpProvider {
    pub fn new(provider_id: impl Into<String>, endpoint: impl Into<String>, flavor: ApiFlavor) -> Self {
        Self { provider_id: provider_id.into(), endpoint: endpoint.into(), flavor, timeout: Duration::from_secs(300) }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn key_variable(provider_id: &str) -> String {
        let name: String =
            provider_id.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' }).collect();
        format!("FRAKTUR_{name}_KEY")
    }

    /// Looks up the credential; a missing or empty variable is an auth error.
    pub fn credential(&self) -> Result<String, GatewayError> {
        let var = Self::key_variable(&self.provider_id);
        match std::env::var(&var) {
            Ok(v) if !v.trim().is_empty() => Ok(v),
            _ => Err(GatewayError::Auth(format!("{var} is not set"))),
        }
    }

    fn body(&self, request: &VisionRequest) -> Value {
        let p = &request.params;
        match self.flavor {
            ApiFlavor::OpenAiChat => {
                let mut content = vec![json!({"type": "text", "text": request.prompt})];
                if let Some(img) = &request.image_b64 {
                    content.push(json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{};base64,{img}", request.media_type)}
                    }));
                }
                let mut body = json!({
                    "model": p.model_id,
                    "temperature": p.temperature,
                    "max_tokens": p.max_output_tokens,
                    "messages": [{"role": "user", "content": content}],
                });
                if p.reasoning_enabled {
                    body["reasoning_effort"] = json!("high");
                }
                body
            }
            ApiFlavor::AnthropicMessages => {
                let mut content = Vec::new();
                if let Some(img) = &request.image_b64 {
                    content.push(json!({
                        "type": "image",
                        "source": {"type": "base64", "media_type": request.media_type, "data": img}
                    }));
                }
                content.push(json!({"type": "text", "text": request.prompt}));
                let mut body = json!({
                    "model": p.model_id,
                    "max_tokens": p.max_output_tokens,
                    "messages": [{"role": "user", "content": content}],
                });
                if p.reasoning_enabled {
                    body["thinking"] = json!({"type": "enabled", "budget_tokens": p.reasoning_budget_tokens});
                } else {
                    body["temperature"] = json!(p.temperature);
                }
                body
            }
        }
    }

    fn parse(&self, v: &Value) -> Result<ProviderReply, ProviderFailure> {
        let tokens = |path: [&str; 2]| v.get(path[0]).and_then(|u| u.get(path[1])).and_then(Value::as_u64);
        match self.flavor {
            ApiFlavor::OpenAiChat => {
                let body = v
                    .pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .ok_or_else(|| ProviderFailure::Fatal("reply has no choices[0].message.content".into()))?;
                Ok(ProviderReply {
                    body: body.to_string(),
                    input_tokens: tokens(["usage", "prompt_tokens"]),
                    output_tokens: tokens(["usage", "completion_tokens"]),
                })
            }
            ApiFlavor::AnthropicMessages => {
                let parts = v
                    .get("content")
                    .and_then(Value::as_array)
                    .ok_or_else(|| ProviderFailure::Fatal("reply has no content array".into()))?;
                let body: String = parts
                    .iter()
                    .filter(|p| p.get("type").and_then(Value::as_str) == Some("text"))
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect();
                Ok(ProviderReply {
                    body,
                    input_tokens: tokens(["usage", "input_tokens"]),
                    output_tokens: tokens(["usage", "output_tokens"]),
                })
            }
        }
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.provider_id
    }

    fn complete(&self, request: &VisionRequest) -> Result<ProviderReply, ProviderFailure> {
        let key = self.credential().map_err(|e| match e {
            GatewayError::Auth(m) => ProviderFailure::Auth(m),
            other => ProviderFailure::Auth(other.to_string()),
        })?;
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let req = agent.post(&self.endpoint).set("content-type", "application/json");
        let req = match self.flavor {
            ApiFlavor::OpenAiChat => req.set("authorization", &format!("Bearer {key}")),
            ApiFlavor::AnthropicMessages => req.set("x-api-key", &key).set("anthropic-version", "2023-06-01"),
        };
        match req.send_json(self.body(request)) {
            Ok(resp) => {
                let v: Value =
                    resp.into_json().map_err(|e| ProviderFailure::Transient(format!("reading reply: {e}")))?;
                self.parse(&v)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", text.chars().take(500).collect::<String>());
                Err(match code {
                    401 | 403 => ProviderFailure::Auth(msg),
                    408 | 409 | 429 | 500..=599 => ProviderFailure::Transient(msg),
                    _ => ProviderFailure::Fatal(msg),
                })
            }
            Err(ureq::Error::Transport(t)) => Err(ProviderFailure::Transient(t.to_string())),
        }
    }
}
