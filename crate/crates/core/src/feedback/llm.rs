//! Blocking chat-completion client used when the grammar gives up.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ActionSequence, FeedbackError, Provenance};

/// Anything that can turn a prompt into an action sequence.
pub trait LanguageModel: Send + Sync {
    fn query(&self, prompt: &str) -> Result<ActionSequence, FeedbackError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            token_env: "REMOVE_LLM_TOKEN".into(),
            timeout_secs: 20.0,
        }
    }
}

pub struct LlmClient {
    config: LlmConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl LlmClient {
    /// Reads the token from the configured environment variable, if set.
    pub fn new(config: LlmConfig) -> Self {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        LlmClient::with_token(config, token)
    }

    pub fn with_token(config: LlmConfig, token: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs_f64(config.timeout_secs.max(0.001))).build();
        LlmClient { config, token, agent }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn request(&self, prompt: &str) -> Result<String, FeedbackError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": prompt }],
        });
        let mut req = self.agent.post(&self.config.endpoint).set("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Status(code, _) => FeedbackError::Transport { message: format!("HTTP status {code}") },
            ureq::Error::Transport(t) => FeedbackError::Transport { message: t.to_string() },
        })?;
        resp.into_string().map_err(|e| FeedbackError::Transport { message: e.to_string() })
    }
}

impl LanguageModel for LlmClient {
    fn query(&self, prompt: &str) -> Result<ActionSequence, FeedbackError> {
        let raw = self.request(prompt)?;
        let v: Value = serde_json::from_str(&raw)
            .map_err(|e| FeedbackError::MalformedResponse { message: format!("response is not JSON: {e}") })?;
        let content = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| FeedbackError::MalformedResponse { message: "missing choices[0].message.content".into() })?;
        extract_sequence(content)
    }
}

/// First `[...]` group whose contents are comma-separated integers.
pub fn extract_sequence(text: &str) -> Result<ActionSequence, FeedbackError> {
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else { break };
        let inner = &after[..close];
        let parsed: Result<Vec<i64>, _> = inner.split(',').map(|s| s.trim().parse::<i64>()).collect();
        if let Ok(codes) = parsed {
            return ActionSequence::from_codes(&codes, Provenance::LanguageModel);
        }
        rest = &after[close + 1..];
    }
    Err(FeedbackError::MalformedResponse { message: format!("no integer list in {text:?}") })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction() {
        assert_eq!(extract_sequence("[2, 2, 1, 1, 0, 0, 0]").unwrap().codes(), vec![2, 2, 1, 1, 0, 0, 0]);
        assert_eq!(extract_sequence("moves [a] then [3,0]").unwrap().codes(), vec![3, 0]);
        assert_eq!(extract_sequence("sure, here you go: [1, 9]"), Err(FeedbackError::InvalidCodes { codes: vec![9] }));
        assert!(matches!(extract_sequence("no list"), Err(FeedbackError::MalformedResponse { .. })));
        assert!(matches!(extract_sequence("[]"), Err(FeedbackError::MalformedResponse { .. })));
        assert!(matches!(extract_sequence("[1, 2"), Err(FeedbackError::MalformedResponse { .. })));
    }
}
