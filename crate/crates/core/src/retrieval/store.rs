//! On-disk chunk store and BM25 scoring.
//!
//! Store layout (format `planrag-chunk-store`, version 1):
//!
//! ```text
//! <dir>/manifest.json   StoreManifest
//! <dir>/chunks.jsonl    one StoredChunk per line, in store order
//! ```
//!
//! Scoring is Okapi BM25 over index terms:
//!
//! ```text
//! score(q, d) = Σ_{t ∈ set(q)} idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! with `|d|` the number of index terms in the chunk, `N` the number of
//! chunks, and query terms counted once each.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{
    chunk_words, index_terms, rank_documents, Document, RetrievalError, RetrievalSet, Retriever,
};

pub const CHUNK_WORDS: usize = 100;
pub const STORE_FORMAT: &str = "planrag-chunk-store";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn idf(n_docs: usize, df: usize) -> f64 {
        let (n, df) = (n_docs as f64, df as f64);
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Contribution of one query term to a chunk's score.
    pub fn term_score(&self, idf: f64, tf: u32, doc_len: u32, avg_len: f64) -> f64 {
        if tf == 0 {
            return 0.0;
        }
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * doc_len as f64 / avg_len;
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredChunk {
    pub doc_id: String,
    pub source_id: String,
    pub text: String,
    /// Number of index terms.
    pub len: u32,
    /// Index term frequencies.
    pub tf: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub id: String,
    pub chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format: String,
    pub version: u32,
    pub chunk_words: usize,
    pub scorer: String,
    pub bm25: Bm25Params,
    pub num_chunks: usize,
    pub sources: Vec<SourceEntry>,
}

#[derive(Debug, Clone)]
pub struct ChunkStore {
    chunk_words: usize,
    params: Bm25Params,
    chunks: Vec<StoredChunk>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    avg_len: f64,
}

impl Default for ChunkStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ChunkStore {
    pub fn new() -> Self {
        Self::with_chunk_words(CHUNK_WORDS)
    }

    pub fn with_chunk_words(chunk_words: usize) -> Self {
        assert!(chunk_words > 0);
        Self {
            chunk_words,
            params: Bm25Params::default(),
            chunks: Vec::new(),
            postings: HashMap::new(),
            avg_len: 1.0,
        }
    }

    pub fn chunk_words(&self) -> usize {
        self.chunk_words
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[StoredChunk] {
        &self.chunks
    }

    /// Source ids in store order.
    pub fn sources(&self) -> Vec<SourceEntry> {
        let mut out: Vec<SourceEntry> = Vec::new();
        for c in &self.chunks {
            match out.last_mut() {
                Some(last) if last.id == c.source_id => last.chunks += 1,
                _ => out.push(SourceEntry {
                    id: c.source_id.clone(),
                    chunks: 1,
                }),
            }
        }
        out
    }

    /// Adds articles. A source id that is already present (in the store or
    /// earlier in `articles`) replaces the earlier text; each replacement is
    /// reported in the returned warnings.
    pub fn ingest<I, S, T>(&mut self, articles: I) -> Vec<String>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut warnings = Vec::new();
        let mut present: HashSet<String> =
            self.chunks.iter().map(|c| c.source_id.clone()).collect();
        for (source, text) in articles {
            let source = source.into();
            if !present.insert(source.clone()) {
                warnings.push(format!("source {source} ingested again; replacing earlier text"));
                self.chunks.retain(|c| c.source_id != source);
            }
            let pieces = chunk_words(text.as_ref(), self.chunk_words);
            if pieces.is_empty() {
                warnings.push(format!("source {source} has no text"));
            }
            for (i, piece) in pieces.into_iter().enumerate() {
                self.chunks.push(make_chunk(&source, i, piece));
            }
        }
        self.reindex();
        warnings
    }

    fn reindex(&mut self) {
        self.postings.clear();
        let mut total = 0u64;
        for (idx, c) in self.chunks.iter().enumerate() {
            total += c.len as u64;
            for (term, &tf) in &c.tf {
                self.postings.entry(term.clone()).or_default().push((idx, tf));
            }
        }
        self.avg_len = if self.chunks.is_empty() || total == 0 {
            1.0
        } else {
            total as f64 / self.chunks.len() as f64
        };
    }

    /// Top-`k` chunks for `query`. Every chunk is a candidate, so `k` at or
    /// above the store size returns all chunks.
    pub fn search(&self, query: &str, k: usize) -> RetrievalSet {
        let n = self.chunks.len();
        let mut scores = vec![0.0f64; n];
        let mut seen = HashSet::new();
        for term in index_terms(query) {
            if !seen.insert(term.clone()) {
                continue;
            }
            let Some(postings) = self.postings.get(&term) else {
                continue;
            };
            let idf = Bm25Params::idf(n, postings.len());
            for &(idx, tf) in postings {
                scores[idx] += self
                    .params
                    .term_score(idf, tf, self.chunks[idx].len, self.avg_len);
            }
        }
        let docs = self
            .chunks
            .iter()
            .zip(scores)
            .map(|(c, score)| Document {
                doc_id: c.doc_id.clone(),
                text: c.text.clone(),
                source_id: c.source_id.clone(),
                score,
            })
            .collect();
        RetrievalSet {
            query: query.to_string(),
            k,
            documents: rank_documents(docs, k),
        }
    }

    pub fn manifest(&self) -> StoreManifest {
        StoreManifest {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            chunk_words: self.chunk_words,
            scorer: "bm25".into(),
            bm25: self.params,
            num_chunks: self.chunks.len(),
            sources: self.sources(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(File::create(dir.join("chunks.jsonl"))?);
        for c in &self.chunks {
            let line = serde_json::to_string(c).map_err(|e| RetrievalError::Store(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        let manifest = serde_json::to_string_pretty(&self.manifest())
            .map_err(|e| RetrievalError::Store(e.to_string()))?;
        fs::write(dir.join("manifest.json"), manifest + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let manifest: StoreManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
                .map_err(|e| RetrievalError::Store(format!("manifest.json: {e}")))?;
        if manifest.format != STORE_FORMAT || manifest.version != STORE_VERSION {
            return Err(RetrievalError::Store(format!(
                "unsupported store {} v{}",
                manifest.format, manifest.version
            )));
        }
        if manifest.chunk_words == 0 {
            return Err(RetrievalError::Store("chunk_words must be positive".into()));
        }
        let reader = BufReader::new(File::open(dir.join("chunks.jsonl"))?);
        let mut chunks = Vec::with_capacity(manifest.num_chunks);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: StoredChunk = serde_json::from_str(&line)
                .map_err(|e| RetrievalError::Store(format!("chunks.jsonl line {}: {e}", i + 1)))?;
            chunks.push(chunk);
        }
        if chunks.len() != manifest.num_chunks {
            return Err(RetrievalError::Store(format!(
                "manifest lists {} chunks, found {}",
                manifest.num_chunks,
                chunks.len()
            )));
        }
        let mut store = Self {
            chunk_words: manifest.chunk_words,
            params: manifest.bm25,
            chunks,
            postings: HashMap::new(),
            avg_len: 1.0,
        };
        store.reindex();
        Ok(store)
    }
}

fn make_chunk(source: &str, index: usize, text: String) -> StoredChunk {
    let terms = index_terms(&text);
    let mut tf = BTreeMap::new();
    for t in &terms {
        *tf.entry(t.clone()).or_insert(0) += 1;
    }
    StoredChunk {
        doc_id: format!("{source}#{index:06}"),
        source_id: source.to_string(),
        text,
        len: terms.len() as u32,
        tf,
    }
}

/// Chunks `articles` into a fresh store. Fails if no article has any words.
pub fn ingest_corpus<I, S, T>(articles: I) -> Result<(ChunkStore, Vec<String>), RetrievalError>
where
    I: IntoIterator<Item = (S, T)>,
    S: Into<String>,
    T: AsRef<str>,
{
    let mut store = ChunkStore::new();
    let warnings = store.ingest(articles);
    if store.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    Ok((store, warnings))
}

/// Retriever backed by an in-memory [`ChunkStore`].
#[derive(Debug, Clone)]
pub struct LocalRetriever {
    store: Arc<ChunkStore>,
}

impl LocalRetriever {
    pub fn new(store: ChunkStore) -> Self {
        Self {
            store: Arc::new(store),
        }
    }

    pub fn open(dir: &Path) -> Result<Self, RetrievalError> {
        Ok(Self::new(ChunkStore::load(dir)?))
    }

    pub fn store(&self) -> &ChunkStore {
        &self.store
    }
}

#[async_trait]
impl Retriever for LocalRetriever {
    async fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        Ok(self.store.search(query, k))
    }
}
