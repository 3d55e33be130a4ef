//! Client for an external retrieval service.
//!
//! Request: `POST <endpoint>` with `{"query": ..., "k": ...}`.
//! Response: `{"documents": [{"id": ..., "text": ..., "score": ...}]}`.

use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{rank_documents, Document, RetrievalError, RetrievalSet, Retriever};

pub const RETRIEVER_ENDPOINT_ENV: &str = "PLANRAG_RETRIEVER_ENDPOINT";

#[derive(Debug, Clone)]
pub struct HttpRetriever {
    endpoint: String,
    client: reqwest::Client,
}

#[derive(Deserialize)]
struct Response {
    documents: Vec<WireDocument>,
}

#[derive(Deserialize)]
struct WireDocument {
    id: String,
    text: String,
    #[serde(default)]
    score: f64,
}

impl HttpRetriever {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, RetrievalError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RetrievalError::EndpointUnavailable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }

    pub fn from_env() -> Result<Self, RetrievalError> {
        let endpoint = std::env::var(RETRIEVER_ENDPOINT_ENV).map_err(|_| {
            RetrievalError::EndpointUnavailable(format!("{RETRIEVER_ENDPOINT_ENV} is not set"))
        })?;
        Self::new(endpoint, Duration::from_secs(60))
    }
}

#[async_trait]
impl Retriever for HttpRetriever {
    async fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&json!({ "query": query, "k": k }))
            .send()
            .await
            .map_err(|e| RetrievalError::EndpointUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(RetrievalError::EndpointUnavailable(format!("status {status}")));
        }
        let body: Response = resp
            .json()
            .await
            .map_err(|e| RetrievalError::Protocol(e.to_string()))?;
        let docs = body
            .documents
            .into_iter()
            .map(|d| Document {
                source_id: d.id.split('#').next().unwrap_or(&d.id).to_string(),
                doc_id: d.id,
                text: d.text,
                score: d.score,
            })
            .collect();
        Ok(RetrievalSet {
            query: query.to_string(),
            k,
            documents: rank_documents(docs, k),
        })
    }
}
