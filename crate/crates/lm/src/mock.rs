use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::client::{AuditLog, AuditOutcome};
use crate::{prompt_hash, CompletionRequest, LanguageModel, LmError, RawCompletion};

/// How scripted responses are matched to requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    /// Responses are served in script order regardless of the prompt.
    Positional,
    /// Responses are looked up by prompt hash; identical prompts get the same reply.
    Keyed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockReply {
    /// Prompt hash; required in keyed mode, ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// A retryable failure to inject instead of a response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        MockReply {
            key: None,
            text: Some(text.into()),
            error: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        MockReply {
            key: None,
            text: None,
            error: Some(message.into()),
        }
    }

    pub fn keyed(mut self, key: impl Into<String>) -> Self {
        self.key = Some(key.into());
        self
    }

    fn to_result(&self) -> Result<RawCompletion, LmError> {
        match (&self.text, &self.error) {
            (Some(t), None) => Ok(RawCompletion::stop(t.clone())),
            (None, Some(e)) => Err(LmError::Scripted(e.clone())),
            _ => unreachable!("validated at construction"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub mode: MockMode,
    pub replies: Vec<MockReply>,
}

impl MockScript {
    pub fn positional(texts: impl IntoIterator<Item = impl Into<String>>) -> Self {
        MockScript {
            mode: MockMode::Positional,
            replies: texts.into_iter().map(MockReply::text).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MockScript, LmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| LmError::InvalidScript(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<(), LmError> {
        if self.replies.is_empty() {
            return Err(LmError::InvalidScript("script has no replies".into()));
        }
        let mut keys = std::collections::BTreeSet::new();
        for (i, r) in self.replies.iter().enumerate() {
            if r.text.is_some() == r.error.is_some() {
                return Err(LmError::InvalidScript(format!(
                    "reply {i} must have exactly one of text and error"
                )));
            }
            if self.mode == MockMode::Keyed {
                let key = r
                    .key
                    .as_deref()
                    .ok_or_else(|| LmError::InvalidScript(format!("reply {i} has no key in keyed mode")))?;
                if !keys.insert(key) {
                    return Err(LmError::InvalidScript(format!("reply {i} repeats key {key}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
struct MockState {
    positional: VecDeque<MockReply>,
    keyed: BTreeMap<String, MockReply>,
    served: usize,
    prompts: Vec<String>,
}

/// Deterministic scripted backend.
#[derive(Debug)]
pub struct MockBackend {
    mode: MockMode,
    state: Mutex<MockState>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<MockBackend, LmError> {
        script.validate()?;
        let mut positional = VecDeque::new();
        let mut keyed = BTreeMap::new();
        for r in script.replies {
            match script.mode {
                MockMode::Positional => positional.push_back(r),
                MockMode::Keyed => {
                    keyed.insert(r.key.clone().expect("validated"), r);
                }
            }
        }
        Ok(MockBackend {
            mode: script.mode,
            state: Mutex::new(MockState {
                positional,
                keyed,
                served: 0,
                prompts: Vec::new(),
            }),
        })
    }

    /// Positional replay of the successful calls in an audit log. A rerun that
    /// issues the same calls in the same order receives the same texts.
    pub fn from_audit_log(path: impl AsRef<Path>) -> Result<MockBackend, LmError> {
        let replies: Vec<MockReply> = AuditLog::read(path)?
            .into_iter()
            .filter_map(|r| match r.outcome {
                AuditOutcome::Ok { text, .. } => Some(MockReply::text(text).keyed(r.prompt_hash)),
                AuditOutcome::Error { .. } => None,
            })
            .collect();
        MockBackend::new(MockScript {
            mode: MockMode::Positional,
            replies,
        })
    }

    /// Prompts received so far, in order.
    pub fn prompts(&self) -> Vec<String> {
        self.lock().prompts.clone()
    }

    /// Positional replies not yet served.
    pub fn remaining(&self) -> usize {
        self.lock().positional.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MockState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl LanguageModel for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<RawCompletion, LmError> {
        let mut s = self.lock();
        s.prompts.push(request.prompt.clone());
        let reply = match self.mode {
            MockMode::Positional => s
                .positional
                .pop_front()
                .ok_or(LmError::ScriptExhausted { served: s.served })?,
            MockMode::Keyed => {
                let key = prompt_hash(&request.prompt);
                s.keyed.get(&key).cloned().ok_or(LmError::NoScriptEntry { key })?
            }
        };
        s.served += 1;
        reply.to_result()
    }
}
