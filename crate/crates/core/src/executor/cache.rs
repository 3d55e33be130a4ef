//! Directory of generated plans keyed by the SHA-256 of the query.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::plan::CanonicalPlan;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedPlan {
    pub query: String,
    pub plan: CanonicalPlan,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PlanCache {
    dir: PathBuf,
}

impl PlanCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(query: &str) -> String {
        hex::encode(Sha256::digest(query.trim().as_bytes()))
    }

    fn path(&self, query: &str) -> PathBuf {
        self.dir.join(format!("{}.json", Self::key(query)))
    }

    /// The cached plan for `query`, if present and readable.
    pub fn get(&self, query: &str) -> Option<CachedPlan> {
        let text = fs::read_to_string(self.path(query)).ok()?;
        let cached: CachedPlan = serde_json::from_str(&text).ok()?;
        (cached.query.trim() == query.trim()).then_some(cached)
    }

    pub fn put(&self, entry: &CachedPlan) -> io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path(&entry.query);
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_string_pretty(entry).map_err(io::Error::other)?;
        fs::write(&tmp, body)?;
        fs::rename(tmp, path)
    }
}
