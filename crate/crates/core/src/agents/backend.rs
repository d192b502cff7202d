use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::AgentEndpointConfig;
use super::parse::extract_json;
use super::{fixture_key, AgentError, AgentRequest, Role};

/// What an endpoint sent back, before role-specific parsing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    #[serde(default)]
    pub text: String,
    /// Answer-token probabilities (not log values), when the endpoint reports them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_logprobs: Option<BTreeMap<String, f64>>,
    /// Structured body from a dedicated endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

impl RawResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }

    pub fn payload(payload: Value) -> Self {
        Self {
            payload: Some(payload),
            ..Self::default()
        }
    }

    /// The structured payload, or JSON found in the text.
    pub fn json(&self) -> Option<Value> {
        match &self.payload {
            Some(v) if !v.is_null() => Some(v.clone()),
            _ => extract_json(&self.text),
        }
    }

    pub fn text_or_payload(&self) -> String {
        if !self.text.trim().is_empty() {
            return self.text.clone();
        }
        self.payload.as_ref().map(Value::to_string).unwrap_or_default()
    }
}

/// Anything that can answer an agent request. Implementations must be safe
/// to share across pipeline workers.
pub trait Backend: Send + Sync {
    fn complete(&self, role: Role, request: &AgentRequest<'_>) -> Result<RawResponse, AgentError>;

    /// Short provenance tag recorded in manifests.
    fn tag(&self) -> String;
}

/// Fixture-backed backend: `<dir>/<role>/<key>.json`, all read at load time.
#[derive(Debug)]
pub struct MockBackend {
    dir: PathBuf,
    fixtures: HashMap<(Role, String), RawResponse>,
}

impl MockBackend {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, AgentError> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(AgentError::Config(format!("mock fixture directory {} not found", dir.display())));
        }
        let mut fixtures = HashMap::new();
        for role in Role::ALL {
            let role_dir = dir.join(role.as_str());
            let Ok(entries) = std::fs::read_dir(&role_dir) else {
                continue;
            };
            for entry in entries {
                let path = entry.map_err(|e| AgentError::Config(e.to_string()))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let key = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
                let raw: RawResponse = serde_json::from_str(&text)
                    .map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
                fixtures.insert((role, key), raw);
            }
        }
        Ok(Self { dir, fixtures })
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Write one fixture file in the layout `load` expects.
    pub fn write_fixture(dir: &Path, role: Role, image: &RgbImage, extra: &str, response: &RawResponse) -> std::io::Result<PathBuf> {
        let role_dir = dir.join(role.as_str());
        std::fs::create_dir_all(&role_dir)?;
        let path = role_dir.join(format!("{}.json", fixture_key(image, extra)));
        let body = serde_json::to_string_pretty(response).map_err(std::io::Error::other)?;
        std::fs::write(&path, body + "\n")?;
        Ok(path)
    }
}

impl Backend for MockBackend {
    fn complete(&self, role: Role, request: &AgentRequest<'_>) -> Result<RawResponse, AgentError> {
        let key = fixture_key(request.image, request.extra);
        self.fixtures
            .get(&(role, key.clone()))
            .cloned()
            .ok_or(AgentError::MissingFixture { role, key })
    }

    fn tag(&self) -> String {
        format!("mock:{}", self.dir.display())
    }
}

/// Sleep before retry `i` (0-based): `base * 2^i`.
pub fn backoff_schedule(max_retries: u32, base: Duration) -> Vec<Duration> {
    (0..max_retries).map(|i| base * 2u32.saturating_pow(i)).collect()
}

/// HTTP client for one role's endpoint.
pub struct RemoteBackend {
    role: Role,
    config: AgentEndpointConfig,
    token: Option<String>,
    agent: ureq::Agent,
    backoff_base: Duration,
}

impl RemoteBackend {
    pub fn new(role: Role, config: AgentEndpointConfig) -> Result<Self, AgentError> {
        config.validate(role)?;
        let token = match &config.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| AgentError::MissingAuth {
                role,
                var: var.clone(),
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            role,
            config,
            token,
            agent,
            backoff_base: Duration::from_secs(1),
        })
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn url(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        if self.config.dedicated || base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn body(&self, request: &AgentRequest<'_>) -> Result<Value, AgentError> {
        let mut png = Vec::new();
        request
            .image
            .write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
            .map_err(|e| AgentError::Config(format!("png encoding: {e}")))?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(png);
        if self.config.dedicated {
            return Ok(json!({ "model": self.config.model_id, "prompt": request.prompt, "image": b64 }));
        }
        let mut body = json!({
            "model": self.config.model_id,
            "temperature": 0,
            "messages": [{
                "role": "user",
                "content": [
                    { "type": "image_url", "image_url": { "url": format!("data:image/png;base64,{b64}") } },
                    { "type": "text", "text": request.prompt }
                ]
            }]
        });
        if self.config.logprob_mode {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(5);
        }
        Ok(body)
    }

    fn attempt(&self, body: &Value) -> Result<Value, (bool, String)> {
        let mut req = self.agent.post(self.url()).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let retryable = status >= 500 || status == 429;
            return Err((retryable, format!("HTTP {status}")));
        }
        resp.body_mut().read_json::<Value>().map_err(|e| (true, e.to_string()))
    }

    fn decode(&self, v: Value) -> RawResponse {
        if self.config.dedicated {
            return RawResponse::payload(v);
        }
        let choice = &v["choices"][0];
        let content = &choice["message"]["content"];
        let text = match content {
            Value::String(s) => s.clone(),
            Value::Array(parts) => parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join(""),
            _ => String::new(),
        };
        let top_logprobs = choice["logprobs"]["content"][0]["top_logprobs"].as_array().map(|list| {
            let mut m = BTreeMap::new();
            for entry in list {
                if let (Some(tok), Some(lp)) = (entry["token"].as_str(), entry["logprob"].as_f64()) {
                    *m.entry(tok.to_string()).or_insert(0.0) += lp.exp();
                }
            }
            m
        });
        RawResponse {
            text,
            top_logprobs,
            payload: None,
        }
    }
}

impl Backend for RemoteBackend {
    fn complete(&self, role: Role, request: &AgentRequest<'_>) -> Result<RawResponse, AgentError> {
        let body = self.body(request)?;
        let delays = backoff_schedule(self.config.max_retries, self.backoff_base);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(v) => return Ok(self.decode(v)),
                Err((retryable, message)) => {
                    let delay = delays.get(attempts as usize - 1);
                    match delay {
                        Some(d) if retryable => {
                            tracing::warn!(%role, attempts, %message, "agent request failed; retrying");
                            std::thread::sleep(*d);
                        }
                        _ => {
                            return Err(AgentError::Transport {
                                role: self.role,
                                attempts,
                                message,
                            })
                        }
                    }
                }
            }
        }
    }

    fn tag(&self) -> String {
        format!("remote:{}#{}", self.config.base_url, self.config.model_id)
    }
}
