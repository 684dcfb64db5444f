use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, Completion, GenerationRequest};

/// One scripted response. A rule matches when its `stage` equals the
/// request stage (or is `*`) and `substring_match` occurs in the request's
/// user text. Rules carrying `error` fail with an API error instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub stage: String,
    #[serde(default)]
    pub substring_match: String,
    #[serde(default)]
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedError {
    pub status: u16,
    #[serde(default)]
    pub body: String,
}

impl ScriptRule {
    pub fn respond(stage: &str, substring: &str, response: &str) -> Self {
        Self {
            stage: stage.into(),
            substring_match: substring.into(),
            response: response.into(),
            error: None,
        }
    }

    pub fn fail(stage: &str, substring: &str, status: u16) -> Self {
        Self {
            stage: stage.into(),
            substring_match: substring.into(),
            response: String::new(),
            error: Some(ScriptedError {
                status,
                body: "scripted failure".into(),
            }),
        }
    }

    fn matches(&self, req: &GenerationRequest, user_text: &str) -> bool {
        (self.stage == "*" || self.stage == req.stage.as_str())
            && user_text.contains(&self.substring_match)
    }
}

/// Deterministic first-match-wins lookup over a rule list. Holds no
/// mutable state.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, req: &GenerationRequest) -> Result<Completion, BackendError> {
        let user = req.user_text();
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(req, &user))
            .ok_or_else(|| BackendError::Unscripted {
                stage: req.stage.as_str().into(),
                excerpt: user.chars().take(80).collect(),
            })?;
        if let Some(err) = &rule.error {
            return Err(BackendError::Api {
                status: err.status,
                body: err.body.clone(),
            });
        }
        Ok(Completion {
            text: rule.response.clone(),
            usage: None,
            retries: 0,
        })
    }
}
