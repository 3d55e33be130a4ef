//! Config file, backend specs, and service wiring.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use planrag::backend::{HttpBackend, HttpBackendConfig, LlmBackend, ScriptedBackend};
use planrag::executor::Mode;
use planrag::retrieval::{HttpRetriever, LocalRetriever, Retriever};
use serde::Deserialize;

use crate::CliError;

pub use planrag::retrieval::RETRIEVER_ENDPOINT_ENV as RETRIEVER_ENV;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub llm_endpoint_env: String,
    pub llm_key_env: String,
    pub llm_model_env: String,
    pub retriever_endpoint: Option<String>,
    pub store: Option<PathBuf>,
    pub mode: Option<String>,
    pub k: usize,
    pub max_parallel: usize,
    /// Dataset items run concurrently.
    pub parallel: usize,
    pub cache_dir: PathBuf,
    pub datasets: Vec<PathBuf>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            llm_endpoint_env: "PLANRAG_LLM_ENDPOINT".into(),
            llm_key_env: "PLANRAG_LLM_KEY".into(),
            llm_model_env: "PLANRAG_LLM_MODEL".into(),
            retriever_endpoint: None,
            store: None,
            mode: None,
            k: 5,
            max_parallel: 4,
            parallel: 2,
            cache_dir: PathBuf::from(".planrag/plans"),
            datasets: Vec::new(),
        }
    }
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.k == 0 {
            return Err(CliError::usage("k must be at least 1"));
        }
        if self.max_parallel == 0 || self.parallel == 0 {
            return Err(CliError::usage("parallelism must be at least 1"));
        }
        if self.store.is_some() && self.retriever_endpoint.is_some() {
            return Err(CliError::usage("configure either a store or a retriever endpoint, not both"));
        }
        Ok(())
    }

    pub fn default_mode(&self) -> Result<Mode, CliError> {
        match &self.mode {
            Some(m) => m.parse().map_err(CliError::usage),
            None => Ok(Mode::PlanSubq),
        }
    }

    fn http_backend(&self) -> Result<HttpBackend, CliError> {
        let endpoint = std::env::var(&self.llm_endpoint_env)
            .map_err(|_| CliError::usage(format!("{} is not set", self.llm_endpoint_env)))?;
        let model = std::env::var(&self.llm_model_env).unwrap_or_else(|_| "default".into());
        let mut cfg = HttpBackendConfig::new(endpoint, model);
        cfg.api_key = std::env::var(&self.llm_key_env).ok().filter(|k| !k.is_empty());
        HttpBackend::new(cfg).map_err(|e| CliError::usage(e.to_string()))
    }

    /// `"http"` for the configured endpoint, otherwise a script file path
    /// (optionally prefixed with `script:`).
    pub fn backend(&self, spec: &str) -> Result<Arc<dyn LlmBackend>, CliError> {
        if spec == "http" {
            return Ok(Arc::new(self.http_backend()?));
        }
        let path = Path::new(spec.strip_prefix("script:").unwrap_or(spec));
        let backend = ScriptedBackend::from_file(path)
            .map_err(|e| CliError::usage(format!("cannot load script {}: {e}", path.display())))?;
        Ok(Arc::new(backend))
    }

    /// The retriever from flags, then config, then the environment. Exactly
    /// one source must be present.
    pub fn retriever(
        &self,
        store: Option<&Path>,
        endpoint: Option<&str>,
    ) -> Result<Arc<dyn Retriever>, CliError> {
        let store = store.map(Path::to_path_buf).or_else(|| self.store.clone());
        let endpoint = endpoint
            .map(str::to_string)
            .or_else(|| self.retriever_endpoint.clone());
        match (store, endpoint) {
            (Some(_), Some(_)) => Err(CliError::usage("give either --store or --retriever-endpoint, not both")),
            (Some(dir), None) => LocalRetriever::open(&dir)
                .map(|r| Arc::new(r) as Arc<dyn Retriever>)
                .map_err(|e| CliError::usage(format!("cannot open store {}: {e}", dir.display()))),
            (None, Some(url)) => HttpRetriever::new(url, Duration::from_secs(60))
                .map(|r| Arc::new(r) as Arc<dyn Retriever>)
                .map_err(|e| CliError::usage(e.to_string())),
            (None, None) => match std::env::var(RETRIEVER_ENV) {
                Ok(url) if !url.is_empty() => HttpRetriever::new(url, Duration::from_secs(60))
                    .map(|r| Arc::new(r) as Arc<dyn Retriever>)
                    .map_err(|e| CliError::usage(e.to_string())),
                _ => Err(CliError::usage(format!(
                    "no retriever: pass --store, --retriever-endpoint, or set {RETRIEVER_ENV}"
                ))),
            },
        }
    }
}
