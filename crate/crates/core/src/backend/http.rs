//! OpenAI-compatible chat completions client.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{estimate_tokens, BackendError, Completion, LlmBackend, PromptBundle};

pub const ENDPOINT_ENV: &str = "PLANRAG_LLM_ENDPOINT";
pub const KEY_ENV: &str = "PLANRAG_LLM_KEY";
pub const MODEL_ENV: &str = "PLANRAG_LLM_MODEL";

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads the endpoint, key and model from the environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| BackendError::BackendUnavailable(format!("{ENDPOINT_ENV} is not set")))?;
        let model = std::env::var(MODEL_ENV).unwrap_or_else(|_| "default".into());
        let mut cfg = Self::new(endpoint, model);
        cfg.api_key = std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn from_env() -> Result<Self, BackendError> {
        Self::new(HttpBackendConfig::from_env()?)
    }
}

fn map_send_error(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::BackendUnavailable(e.to_string())
    }
}

#[async_trait]
impl LlmBackend for HttpBackend {
    async fn generate(&self, bundle: &PromptBundle) -> Result<Completion, BackendError> {
        if bundle.user.trim().is_empty() && bundle.system.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let body = json!({
            "model": self.config.model,
            "messages": bundle.messages(),
            "temperature": bundle.temperature,
        });
        let started = Instant::now();
        let mut req = self.client.post(self.config.url()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(map_send_error)?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(BackendError::RateLimited { retry_after });
        }
        if status.is_server_error() {
            return Err(BackendError::BackendUnavailable(format!("status {status}")));
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(BackendError::Protocol(format!("status {status}: {text}")));
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Protocol(e.to_string())
            }
        })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        let usage = parsed.usage;
        let input_tokens = usage
            .as_ref()
            .and_then(|u| u.prompt_tokens)
            .unwrap_or_else(|| estimate_tokens(&bundle.input_text()));
        let output_tokens = usage
            .as_ref()
            .and_then(|u| u.completion_tokens)
            .unwrap_or_else(|| estimate_tokens(&text));
        Ok(Completion {
            text,
            input_tokens,
            output_tokens,
            latency: started.elapsed(),
        })
    }
}
