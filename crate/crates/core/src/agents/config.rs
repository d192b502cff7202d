use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentError, Role};

pub const MOCK_SCHEME: &str = "mock://";

/// Endpoint settings for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEndpointConfig {
    /// `mock://<dir>` selects the fixture backend.
    pub base_url: String,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub prompt_template: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default)]
    pub logprob_mode: bool,
    /// Non-chat endpoint that takes `{image, prompt}` and returns JSON directly.
    #[serde(default)]
    pub dedicated: bool,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    2
}

impl AgentEndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_id: String::new(),
            prompt_template: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            auth_token_env: None,
            logprob_mode: false,
            dedicated: false,
        }
    }

    pub fn mock_dir(&self) -> Option<&str> {
        self.base_url.strip_prefix(MOCK_SCHEME)
    }

    pub fn template(&self, role: Role) -> &str {
        self.prompt_template.as_deref().unwrap_or(role.default_prompt())
    }

    pub fn validate(&self, role: Role) -> Result<(), AgentError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(AgentError::Config(format!("{role}: timeout must be positive")));
        }
        if self.base_url.trim().is_empty() {
            return Err(AgentError::Config(format!("{role}: empty base_url")));
        }
        for name in placeholders(self.template(role)) {
            if !role.placeholders().contains(&name.as_str()) {
                return Err(AgentError::Config(format!(
                    "{role}: prompt placeholder {{{name}}} is not available for this role"
                )));
            }
        }
        Ok(())
    }

    /// Substitute `{name}` placeholders.
    pub fn render(&self, role: Role, vars: &[(&str, &str)]) -> Result<String, AgentError> {
        let mut out = self.template(role).to_string();
        for name in placeholders(self.template(role)) {
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| AgentError::Config(format!("{role}: no value for placeholder {{{name}}}")))?;
            out = out.replace(&format!("{{{name}}}"), value);
        }
        Ok(out)
    }
}

fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                let name = &after[..end];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    out.push(name.to_string());
                }
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

/// Role → endpoint map, as read from the agent config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentsConfig {
    roles: BTreeMap<Role, AgentEndpointConfig>,
}

impl AgentsConfig {
    pub fn new(roles: BTreeMap<Role, AgentEndpointConfig>) -> Self {
        Self { roles }
    }

    /// Every role served from one fixture directory.
    pub fn mock(dir: impl AsRef<Path>) -> Self {
        let url = format!("{MOCK_SCHEME}{}", dir.as_ref().display());
        let roles = Role::ALL
            .iter()
            .map(|&r| {
                let mut c = AgentEndpointConfig::new(url.clone());
                c.logprob_mode = matches!(r, Role::Orientation | Role::Probe | Role::AnswerProbe);
                c.dedicated = matches!(r, Role::Segmenter | Role::Ocr);
                (r, c)
            })
            .collect();
        Self { roles }
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        serde_json::from_str(text).map_err(|e| AgentError::Config(format!("agent config: {e}")))
    }

    /// Read a config file. Relative mock directories resolve against the
    /// file's own directory, and prompt templates are filled with defaults.
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for endpoint in cfg.roles.values_mut() {
            if let Some(dir) = endpoint.mock_dir() {
                if Path::new(dir).is_relative() {
                    endpoint.base_url = format!("{MOCK_SCHEME}{}", base.join(dir).display());
                }
            }
        }
        Ok(cfg)
    }

    /// Explicit templates everywhere, so the effective config is self-describing.
    pub fn with_default_prompts(mut self) -> Self {
        for (role, endpoint) in self.roles.iter_mut() {
            if endpoint.prompt_template.is_none() {
                endpoint.prompt_template = Some(role.default_prompt().to_string());
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        for (role, endpoint) in &self.roles {
            endpoint.validate(*role)?;
        }
        Ok(())
    }

    pub fn get(&self, role: Role) -> Result<&AgentEndpointConfig, AgentError> {
        self.roles
            .get(&role)
            .ok_or_else(|| AgentError::Config(format!("no endpoint configured for role {role}")))
    }

    pub fn get_mut(&mut self, role: Role) -> Option<&mut AgentEndpointConfig> {
        self.roles.get_mut(&role)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Role, &AgentEndpointConfig)> {
        self.roles.iter().map(|(r, c)| (*r, c))
    }

    /// Roles that talk to a live endpoint.
    pub fn remote_roles(&self) -> Vec<Role> {
        self.iter().filter(|(_, c)| c.mock_dir().is_none()).map(|(r, _)| r).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_values() {
        let c: AgentEndpointConfig = serde_json::from_str(r#"{"base_url":"http://x"}"#).unwrap();
        assert_eq!(c.timeout_secs, 60.0);
        assert_eq!(c.max_retries, 2);
        assert!(!c.logprob_mode);
    }

    #[test]
    fn rendering_fills_placeholders() {
        let c = AgentEndpointConfig::new("mock://x");
        let p = c.render(Role::Detector, &[("object", "credit or debit card")]).unwrap();
        assert_eq!(p, "Locate credit or debit card in the image and output in JSON format.");
        assert!(c.render(Role::Detector, &[]).is_err());
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let mut c = AgentEndpointConfig::new("mock://x");
        c.prompt_template = Some("find {thing}".into());
        assert!(c.validate(Role::Detector).is_err());
        c.prompt_template = Some("find {object}".into());
        assert!(c.validate(Role::Detector).is_ok());
        c.timeout_secs = 0.0;
        assert!(c.validate(Role::Detector).is_err());
    }

    #[test]
    fn config_file_round_trip_and_relative_mock_dir() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = AgentsConfig::mock("fixtures");
        let path = dir.path().join("agents.json");
        std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        let back = AgentsConfig::load(&path).unwrap();
        let url = &back.get(Role::Ocr).unwrap().base_url;
        assert_eq!(url, &format!("mock://{}", dir.path().join("fixtures").display()));
        assert!(back.remote_roles().is_empty());
        assert!(AgentsConfig::from_json(r#"{"wizard":{"base_url":"x"}}"#).is_err());
    }
}
