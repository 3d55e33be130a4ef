//! Document supply: corpus chunking, a local lexical retriever, and an HTTP
//! client for external retrieval services.
//!
//! A word is a maximal run of non-whitespace. For indexing, words are
//! lowercased and stripped of every non-alphanumeric character; words that
//! strip to nothing are not indexed. Chunk text keeps the raw words joined
//! by single spaces.

mod http;
mod store;

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use sha2::{Digest, Sha256};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpRetriever, RETRIEVER_ENDPOINT_ENV};
pub use store::{
    ingest_corpus, Bm25Params, ChunkStore, LocalRetriever, StoreManifest, CHUNK_WORDS,
    STORE_FORMAT, STORE_VERSION,
};

/// Retrieval count used throughout the evaluation setup.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub source_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSet {
    pub query: String,
    pub k: usize,
    pub documents: Vec<Document>,
}

impl RetrievalSet {
    pub fn empty(query: impl Into<String>, k: usize) -> Self {
        Self {
            query: query.into(),
            k,
            documents: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn texts(&self) -> Vec<String> {
        self.documents.iter().map(|d| d.text.clone()).collect()
    }
}

/// Sorts by descending score, ties by ascending doc id, and keeps the first `k`.
pub fn rank_documents(mut docs: Vec<Document>, k: usize) -> Vec<Document> {
    docs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    docs.truncate(k);
    docs
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus contains no text")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("retrieval endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("malformed retrieval response: {0}")]
    Protocol(String),
    #[error("chunk store: {0}")]
    Store(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[async_trait]
pub trait Retriever: Send + Sync {
    async fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalSet, RetrievalError>;
}

#[async_trait]
impl<T: Retriever + ?Sized> Retriever for std::sync::Arc<T> {
    async fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalSet, RetrievalError> {
        (**self).retrieve(query, k).await
    }
}

/// Raw words of `text`.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Index form of a single word, or `None` if nothing alphanumeric remains.
pub fn normalize_word(word: &str) -> Option<String> {
    let term: String = word
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    (!term.is_empty()).then_some(term)
}

/// Index terms of `text` in order, duplicates kept.
pub fn index_terms(text: &str) -> Vec<String> {
    words(text).filter_map(normalize_word).collect()
}

/// Splits `text` into consecutive, non-overlapping runs of at most `size` words.
pub fn chunk_words(text: &str, size: usize) -> Vec<String> {
    assert!(size > 0, "chunk size must be positive");
    let all: Vec<&str> = words(text).collect();
    all.chunks(size).map(|c| c.join(" ")).collect()
}

/// A retrieval call as seen by [`ScriptedRetriever`] or [`RecordingRetriever`].
#[derive(Debug, Clone)]
pub struct RetrievalCall {
    pub query: String,
    pub k: usize,
    pub started: Instant,
    pub finished: Instant,
}

/// Returns fixed documents per query, with an optional delay. Useful for
/// tests and dry runs without a corpus. Document ids are derived from the
/// text, so the same passage has the same id under every query.
#[derive(Debug, Default)]
pub struct ScriptedRetriever {
    by_query: HashMap<String, Vec<String>>,
    fallback: Vec<String>,
    delay: Duration,
    calls: Mutex<Vec<RetrievalCall>>,
}

impl ScriptedRetriever {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on(mut self, query: &str, texts: &[&str]) -> Self {
        self.by_query
            .insert(query.to_string(), texts.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn fallback(mut self, texts: &[&str]) -> Self {
        self.fallback = texts.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> Vec<RetrievalCall> {
        self.calls.lock().expect("call log").clone()
    }
}

#[async_trait]
impl Retriever for ScriptedRetriever {
    async fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let started = Instant::now();
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        let texts = self.by_query.get(query).unwrap_or(&self.fallback);
        let n = texts.len();
        let documents = texts
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, t)| Document {
                doc_id: format!("scripted#{}", &hex::encode(Sha256::digest(t.as_bytes()))[..12]),
                text: t.clone(),
                source_id: "scripted".into(),
                score: (n - i) as f64,
            })
            .collect();
        self.calls.lock().expect("call log").push(RetrievalCall {
            query: query.to_string(),
            k,
            started,
            finished: Instant::now(),
        });
        Ok(RetrievalSet {
            query: query.to_string(),
            k,
            documents,
        })
    }
}

/// Wraps a retriever and logs every call.
pub struct RecordingRetriever<R> {
    inner: R,
    calls: Mutex<Vec<RetrievalCall>>,
}

impl<R: Retriever> RecordingRetriever<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<RetrievalCall> {
        self.calls.lock().expect("call log").clone()
    }

    pub fn inner(&self) -> &R {
        &self.inner
    }
}

#[async_trait]
impl<R: Retriever> Retriever for RecordingRetriever<R> {
    async fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalSet, RetrievalError> {
        let started = Instant::now();
        let result = self.inner.retrieve(query, k).await;
        self.calls.lock().expect("call log").push(RetrievalCall {
            query: query.to_string(),
            k,
            started,
            finished: Instant::now(),
        });
        result
    }
}
