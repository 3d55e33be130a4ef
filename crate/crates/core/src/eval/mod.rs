//! Metrics over run records: answer accuracy, reasoning-depth histograms,
//! retrieval precision/recall against gold sentences, token means, and the
//! judge-scored information-gain curve.

mod ig;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{RunRecord, RunStatus};
use crate::retrieval::{chunk_words, index_terms};

pub use ig::{info_gain_curve, IgCurve, IgOptions, IgPoint};

/// Words per gold-sentence chunk for precision/recall matching.
pub const GOLD_CHUNK_WORDS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sentences: Option<Vec<String>>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("item {0} has no gold sentences")]
    MissingGold(String),
    #[error("records and dataset disagree: no item for {unknown:?}, no record for {missing:?}, duplicated {duplicated:?}")]
    IdMismatch {
        unknown: Vec<String>,
        missing: Vec<String>,
        duplicated: Vec<String>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Reads JSON lines, skipping blank ones. Errors carry 1-based line numbers.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Loads a dataset file and checks that every item has at least one answer.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, EvalError> {
    let items: Vec<DatasetItem> = read_jsonl(path)?;
    for (i, item) in items.iter().enumerate() {
        if item.answers.iter().all(|a| a.trim().is_empty()) {
            return Err(EvalError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("item {} has no answers", item.id),
            });
        }
    }
    Ok(items)
}

/// Lowercases, collapses whitespace, and trims punctuation from both ends.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

/// True iff some gold answer, normalized, occurs in the normalized prediction.
pub fn accuracy_contains(prediction: &str, answers: &[String]) -> bool {
    let pred = normalize_answer(prediction);
    answers.iter().any(|a| {
        let gold = normalize_answer(a);
        !gold.is_empty() && pred.contains(&gold)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBucket {
    pub label: String,
    pub count: usize,
    pub fraction: f64,
}

/// Counts per reasoning depth with depths of four or more pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthHistogram {
    pub n: usize,
    pub buckets: Vec<DepthBucket>,
}

impl DepthHistogram {
    pub fn from_depths(depths: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = [0usize; 5];
        let mut n = 0;
        for d in depths {
            counts[d.min(4)] += 1;
            n += 1;
        }
        let buckets = counts
            .iter()
            .enumerate()
            .map(|(d, &count)| DepthBucket {
                label: if d == 4 { ">=4".into() } else { d.to_string() },
                count,
                fraction: if n == 0 { 0.0 } else { count as f64 / n as f64 },
            })
            .collect();
        Self { n, buckets }
    }

    pub fn get(&self, label: &str) -> Option<&DepthBucket> {
        self.buckets.iter().find(|b| b.label == label)
    }
}

pub fn depth_histogram(records: &[RunRecord]) -> DepthHistogram {
    DepthHistogram::from_depths(records.iter().map(|r| r.depth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// Retrieved documents containing a gold chunk.
    pub hits: usize,
    pub retrieved: usize,
    /// Gold sentences with a chunk found in some retrieved document.
    pub covered: usize,
    pub gold: usize,
}

fn padded(words: &[String]) -> String {
    format!(" {} ", words.join(" "))
}

/// Normalized gold chunks of one sentence.
pub fn gold_chunks(sentence: &str) -> Vec<String> {
    chunk_words(sentence, GOLD_CHUNK_WORDS)
        .iter()
        .map(|c| index_terms(c))
        .filter(|t| !t.is_empty())
        .map(|t| padded(&t))
        .collect()
}

/// Micro-averaged retrieval precision and recall over records joined to
/// items by id. Each record's documents are deduplicated by id.
pub fn retrieval_pr(records: &[RunRecord], items: &[DatasetItem]) -> Result<PrecisionRecall, EvalError> {
    let by_id: HashMap<&str, &DatasetItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let (mut hits, mut retrieved, mut covered, mut gold) = (0, 0, 0, 0);
    for record in records {
        let item = by_id.get(record.id.as_str()).ok_or_else(|| EvalError::IdMismatch {
            unknown: vec![record.id.clone()],
            missing: vec![],
            duplicated: vec![],
        })?;
        let sentences = item
            .gold_sentences
            .as_ref()
            .filter(|g| !g.is_empty())
            .ok_or_else(|| EvalError::MissingGold(item.id.clone()))?;
        let chunks: Vec<Vec<String>> = sentences.iter().map(|s| gold_chunks(s)).collect();
        let docs: Vec<String> = record
            .retrieved_documents()
            .into_iter()
            .map(|d| padded(&index_terms(&d.text)))
            .collect();
        retrieved += docs.len();
        hits += docs
            .iter()
            .filter(|d| chunks.iter().flatten().any(|c| d.contains(c.as_str())))
            .count();
        gold += sentences.len();
        covered += chunks
            .iter()
            .filter(|cs| cs.iter().any(|c| docs.iter().any(|d| d.contains(c.as_str()))))
            .count();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(PrecisionRecall {
        precision: ratio(hits, retrieved),
        recall: ratio(covered, gold),
        hits,
        retrieved,
        covered,
        gold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenMeans {
    pub input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub depth_histogram: DepthHistogram,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    pub tokens: TokenMeans,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ig_curve: Option<IgCurve>,
    /// Records whose run did not complete.
    pub incomplete: usize,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    /// Compute precision/recall; skipped with a note if any item lacks gold sentences.
    pub pr: bool,
}

/// Joins records with items on id and computes every metric except the
/// information-gain curve, which needs a judge (see [`info_gain_curve`]).
pub fn build_report(
    records: &[RunRecord],
    items: &[DatasetItem],
    options: ReportOptions,
) -> Result<EvalReport, EvalError> {
    let item_ids: BTreeSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
    let mut seen = BTreeSet::new();
    let mut duplicated = Vec::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            duplicated.push(r.id.clone());
        }
    }
    let unknown: Vec<String> = seen.difference(&item_ids).map(|s| s.to_string()).collect();
    let missing: Vec<String> = item_ids.difference(&seen).map(|s| s.to_string()).collect();
    if !unknown.is_empty() || !missing.is_empty() || !duplicated.is_empty() {
        return Err(EvalError::IdMismatch {
            unknown,
            missing,
            duplicated,
        });
    }
    let by_id: HashMap<&str, &DatasetItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let n = records.len();
    let correct = records
        .iter()
        .filter(|r| accuracy_contains(&r.final_answer, &by_id[r.id.as_str()].answers))
        .count();
    let mean = |total: u64| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    let mut notes = Vec::new();
    let has_gold = items
        .iter()
        .all(|i| i.gold_sentences.as_ref().is_some_and(|g| !g.is_empty()));
    let pr = if options.pr && has_gold {
        Some(retrieval_pr(records, items)?)
    } else {
        if options.pr {
            notes.push("precision/recall omitted: some items have no gold sentences".into());
        }
        None
    };
    Ok(EvalReport {
        n,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        correct,
        depth_histogram: depth_histogram(records),
        precision: pr.map(|p| p.precision),
        recall: pr.map(|p| p.recall),
        tokens: TokenMeans {
            input: mean(records.iter().map(|r| r.tokens.input).sum()),
            output: mean(records.iter().map(|r| r.tokens.output).sum()),
        },
        ig_curve: None,
        incomplete: records.iter().filter(|r| r.status != RunStatus::Complete).count(),
        notes,
    })
}

impl EvalReport {
    /// Plain-text summary.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "items        {}", self.n);
        let _ = writeln!(s, "accuracy     {:.4} ({}/{})", self.accuracy, self.correct, self.n);
        if let (Some(p), Some(r)) = (self.precision, self.recall) {
            let _ = writeln!(s, "precision    {p:.4}");
            let _ = writeln!(s, "recall       {r:.4}");
        }
        let _ = writeln!(s, "tokens/query in {:.1} out {:.1}", self.tokens.input, self.tokens.output);
        if self.incomplete > 0 {
            let _ = writeln!(s, "incomplete   {}", self.incomplete);
        }
        let _ = writeln!(s, "\ndepth  count  percent");
        for b in &self.depth_histogram.buckets {
            let _ = writeln!(s, "{:<6} {:<6} {:.2}", b.label, b.count, 100.0 * b.fraction);
        }
        if let Some(curve) = &self.ig_curve {
            let _ = writeln!(s, "\ndepth  mean_ig  n");
            for (d, p) in &curve.points {
                let _ = writeln!(s, "{:<6} {:<8.2} {}", d, p.mean, p.count);
            }
        }
        for note in &self.notes {
            let _ = writeln!(s, "note: {note}");
        }
        s
    }
}

/// Accuracy per depth bucket, for breaking results down like the depth table.
pub fn accuracy_by_depth(records: &[RunRecord], items: &[DatasetItem]) -> BTreeMap<usize, f64> {
    let by_id: HashMap<&str, &DatasetItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let Some(item) = by_id.get(r.id.as_str()) else {
            continue;
        };
        let entry = tally.entry(r.depth.min(4)).or_default();
        entry.1 += 1;
        if accuracy_contains(&r.final_answer, &item.answers) {
            entry.0 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(d, (c, n))| (d, c as f64 / n as f64))
        .collect()
}

#[cfg(test)]
mod tests;
