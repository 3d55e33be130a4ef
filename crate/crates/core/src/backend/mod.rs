//! Text-generation backends and the prompts sent to them.

mod http;
mod json;
pub mod prompts;
mod scripted;

use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpBackendConfig};
pub use json::{extract_json_object, extract_json_response, parse_judge_score, MalformedGeneration};
pub use scripted::{user_key, ScriptFile, ScriptRule, ScriptedBackend, ScriptedCall};

/// What a prompt is for. Scripted backends key their responses on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPurpose {
    Plan,
    TagReplace,
    Answer,
    VanillaLlm,
    VanillaRag,
    Cot,
    QdSplit,
    QdAnswer,
    IgJudge,
}

impl fmt::Display for PromptPurpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PromptPurpose::Plan => "plan",
            PromptPurpose::TagReplace => "tag_replace",
            PromptPurpose::Answer => "answer",
            PromptPurpose::VanillaLlm => "vanilla_llm",
            PromptPurpose::VanillaRag => "vanilla_rag",
            PromptPurpose::Cot => "cot",
            PromptPurpose::QdSplit => "qd_split",
            PromptPurpose::QdAnswer => "qd_answer",
            PromptPurpose::IgJudge => "ig_judge",
        };
        f.write_str(s)
    }
}

/// A fully rendered request: system instructions plus user content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    /// Wrap into a single `[INST]`/`<<SYS>>` user turn for Llama-2 style chat models.
    pub role_tag_wrapping: bool,
    pub temperature: f64,
    pub purpose: PromptPurpose,
}

/// A chat message as sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl PromptBundle {
    pub fn new(purpose: PromptPurpose, system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            role_tag_wrapping: false,
            temperature: 0.0,
            purpose,
        }
    }

    pub fn with_role_tag_wrapping(mut self, on: bool) -> Self {
        self.role_tag_wrapping = on;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        if self.role_tag_wrapping {
            let content = format!(
                "<s>[INST] <<SYS>>\n{}\n<</SYS>>\n\n{} [/INST]",
                self.system, self.user
            );
            return vec![ChatMessage {
                role: "user".into(),
                content,
            }];
        }
        vec![
            ChatMessage {
                role: "system".into(),
                content: self.system.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: self.user.clone(),
            },
        ]
    }

    /// All text the model will read, for token estimation.
    pub fn input_text(&self) -> String {
        self.messages()
            .into_iter()
            .map(|m| m.content)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(with = "crate::serde_duration")]
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("no scripted response for {purpose} prompt (user sha256 {key})")]
    NoScript { purpose: PromptPurpose, key: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Errors worth retrying.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::BackendUnavailable(_)
                | BackendError::Timeout
                | BackendError::RateLimited { .. }
        )
    }
}

#[async_trait]
pub trait LlmBackend: Send + Sync {
    async fn generate(&self, bundle: &PromptBundle) -> Result<Completion, BackendError>;
}

#[async_trait]
impl<T: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<T> {
    async fn generate(&self, bundle: &PromptBundle) -> Result<Completion, BackendError> {
        (**self).generate(bundle).await
    }
}

/// Approximate token count used when a service does not report usage:
/// whitespace-delimited words times 4/3, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    (words * 4).div_ceil(3)
}

/// Bounded retry for transient backend failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    #[serde(with = "crate::serde_duration")]
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 2,
            base_backoff: Duration::from_millis(250),
        }
    }
}

/// Calls `backend`, retrying transient errors with exponential backoff.
/// Returns the completion and the number of retries that were needed.
pub async fn generate_with_retry(
    backend: &dyn LlmBackend,
    bundle: &PromptBundle,
    policy: RetryPolicy,
    timeout: Option<Duration>,
) -> Result<(Completion, u32), BackendError> {
    if bundle.user.trim().is_empty() && bundle.system.trim().is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    let attempts = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        let call = backend.generate(bundle);
        let result = match timeout {
            Some(limit) => tokio::time::timeout(limit, call)
                .await
                .unwrap_or(Err(BackendError::Timeout)),
            None => call.await,
        };
        match result {
            Ok(c) => return Ok((c, attempt)),
            Err(e) if e.is_transient() && attempt + 1 < attempts => {
                let mut wait = policy.base_backoff * 2u32.pow(attempt);
                if let BackendError::RateLimited {
                    retry_after: Some(after),
                } = e
                {
                    wait = wait.max(after);
                }
                tracing::debug!(purpose = %bundle.purpose, error = %e, ?wait, "retrying backend call");
                tokio::time::sleep(wait).await;
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
