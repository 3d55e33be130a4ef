//! Deterministic backend that replays canned responses.
//!
//! Responses are looked up by prompt purpose plus, in order of precedence:
//! the SHA-256 of the exact user content, a substring of the user content,
//! or nothing (a per-purpose fallback). A rule with several responses hands
//! them out in order and then keeps repeating the last one.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{estimate_tokens, BackendError, Completion, LlmBackend, PromptBundle, PromptPurpose};

/// One scripted reply rule, as stored in a script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub purpose: PromptPurpose,
    /// Exact user content to match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    /// Hex SHA-256 of the exact user content, for scripts that avoid
    /// embedding long prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_sha256: Option<String>,
    /// Substring of the user content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub responses: Vec<String>,
    /// Extra latency for calls matching this rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

/// On-disk script format: `{"delay_ms": 0, "rules": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub delay_ms: u64,
    pub rules: Vec<ScriptRule>,
}

/// A call the scripted backend received.
#[derive(Debug, Clone)]
pub struct ScriptedCall {
    pub purpose: PromptPurpose,
    pub system: String,
    pub user: String,
    pub response: Option<String>,
    pub started: Instant,
    pub finished: Instant,
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    exact: HashMap<(PromptPurpose, String), usize>,
    delay: Duration,
    cursors: Mutex<HashMap<usize, usize>>,
    calls: Mutex<Vec<ScriptedCall>>,
}

pub fn user_key(user: &str) -> String {
    hex::encode(Sha256::digest(user.as_bytes()))
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: ScriptFile) -> Self {
        let mut backend = Self::new().with_delay(Duration::from_millis(script.delay_ms));
        for rule in script.rules {
            backend = backend.rule(rule);
        }
        backend
    }

    pub fn from_file(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        let script: ScriptFile = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::from_script(script))
    }

    /// Adds a rule. Exact-content rules registered later win over earlier ones.
    pub fn rule(mut self, rule: ScriptRule) -> Self {
        let idx = self.rules.len();
        let key = rule
            .user
            .as_deref()
            .map(user_key)
            .or_else(|| rule.user_sha256.clone());
        if let Some(key) = key {
            self.exact.insert((rule.purpose, key.to_ascii_lowercase()), idx);
        }
        self.rules.push(rule);
        self
    }

    /// Replies `response` to prompts of `purpose` whose user content is exactly `user`.
    pub fn on(self, purpose: PromptPurpose, user: &str, response: &str) -> Self {
        self.on_seq(purpose, user, &[response])
    }

    pub fn on_seq(self, purpose: PromptPurpose, user: &str, responses: &[&str]) -> Self {
        self.rule(ScriptRule {
            purpose,
            user: Some(user.to_string()),
            user_sha256: None,
            contains: None,
            responses: responses.iter().map(|s| s.to_string()).collect(),
            delay_ms: None,
        })
    }

    /// Replies `response` when the user content contains `needle`.
    pub fn on_contains(self, purpose: PromptPurpose, needle: &str, response: &str) -> Self {
        self.rule(ScriptRule {
            purpose,
            user: None,
            user_sha256: None,
            contains: Some(needle.to_string()),
            responses: vec![response.to_string()],
            delay_ms: None,
        })
    }

    /// Replies to any otherwise unmatched prompt of `purpose`.
    pub fn fallback(self, purpose: PromptPurpose, responses: &[&str]) -> Self {
        self.rule(ScriptRule {
            purpose,
            user: None,
            user_sha256: None,
            contains: None,
            responses: responses.iter().map(|s| s.to_string()).collect(),
            delay_ms: None,
        })
    }

    /// Latency added to every call.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> Vec<ScriptedCall> {
        self.calls.lock().expect("call log").clone()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().expect("call log").clear();
    }

    fn lookup(&self, bundle: &PromptBundle) -> Option<usize> {
        let key = (bundle.purpose, user_key(&bundle.user));
        if let Some(&idx) = self.exact.get(&key) {
            return Some(idx);
        }
        let by_purpose = || self.rules.iter().enumerate().filter(|(_, r)| r.purpose == bundle.purpose);
        by_purpose()
            .find(|(_, r)| r.contains.as_deref().is_some_and(|n| bundle.user.contains(n)))
            .or_else(|| {
                by_purpose().find(|(_, r)| {
                    r.user.is_none() && r.user_sha256.is_none() && r.contains.is_none()
                })
            })
            .map(|(idx, _)| idx)
    }

    fn next_response(&self, idx: usize) -> Option<String> {
        let rule = &self.rules[idx];
        let mut cursors = self.cursors.lock().expect("script cursor");
        let cursor = cursors.entry(idx).or_insert(0);
        let response = rule
            .responses
            .get(*cursor)
            .or_else(|| rule.responses.last())
            .cloned();
        *cursor += 1;
        response
    }
}

#[async_trait]
impl LlmBackend for ScriptedBackend {
    async fn generate(&self, bundle: &PromptBundle) -> Result<Completion, BackendError> {
        if bundle.user.trim().is_empty() && bundle.system.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let started = Instant::now();
        let matched = self.lookup(bundle);
        let delay = self.delay
            + matched
                .and_then(|i| self.rules[i].delay_ms)
                .map(Duration::from_millis)
                .unwrap_or_default();
        let response = matched.and_then(|i| self.next_response(i));
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        self.calls.lock().expect("call log").push(ScriptedCall {
            purpose: bundle.purpose,
            system: bundle.system.clone(),
            user: bundle.user.clone(),
            response: response.clone(),
            started,
            finished: Instant::now(),
        });
        let text = response.ok_or_else(|| BackendError::NoScript {
            purpose: bundle.purpose,
            key: user_key(&bundle.user),
        })?;
        Ok(Completion {
            input_tokens: estimate_tokens(&bundle.input_text()),
            output_tokens: estimate_tokens(&text),
            text,
            latency: delay,
        })
    }
}
