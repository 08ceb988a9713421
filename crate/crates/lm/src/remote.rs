use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{CompletionRequest, FinishReason, LanguageModel, LmError, RawCompletion};

pub const ENV_ENDPOINT: &str = "PARLEY_LM_ENDPOINT";
pub const ENV_MODEL: &str = "PARLEY_LM_MODEL";
pub const ENV_API_KEY: &str = "PARLEY_LM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl RemoteConfig {
    pub fn from_env() -> Result<RemoteConfig, LmError> {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        Ok(RemoteConfig {
            endpoint: var(ENV_ENDPOINT).ok_or_else(|| LmError::Config(format!("{ENV_ENDPOINT} is not set")))?,
            model: var(ENV_MODEL).ok_or_else(|| LmError::Config(format!("{ENV_MODEL} is not set")))?,
            api_key: var(ENV_API_KEY),
            timeout_secs: default_timeout(),
        })
    }
}

/// Client for OpenAI-compatible chat-completion servers.
#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    url: String,
    http: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<RemoteBackend, LmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LmError::Config(e.to_string()))?;
        let url = format!("{}/chat/completions", config.endpoint.trim_end_matches('/'));
        Ok(RemoteBackend { config, url, http })
    }

    pub fn from_env() -> Result<RemoteBackend, LmError> {
        RemoteBackend::new(RemoteConfig::from_env()?)
    }

    fn body(&self, request: &CompletionRequest) -> serde_json::Value {
        let p = &request.params;
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": p.temperature,
            "top_p": p.top_p,
            "max_tokens": p.max_tokens,
        });
        if !p.stop.is_empty() {
            body["stop"] = json!(p.stop);
        }
        if let Some(seed) = p.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl LanguageModel for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, LmError> {
        let mut req = self.http.post(&self.url).json(&self.body(request));
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LmError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LmError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let malformed = |message: String| LmError::Malformed {
            message,
            body: text.chars().take(2000).collect(),
        };
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| malformed("no choices in response".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        let text = choice
            .message
            .content
            .ok_or_else(|| malformed("choice has no content".into()))?;
        Ok(RawCompletion { text, finish_reason })
    }
}
