//! Judge-scored information gain per reasoning depth.

use std::collections::BTreeMap;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::backend::parse_judge_score;
use crate::backend::prompts::ig_judge_prompt;
use crate::backend::LlmBackend;
use crate::executor::RunRecord;
use crate::plan::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgPoint {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IgCurve {
    /// Mean judge score keyed by depth; only depths reached by some record.
    pub points: BTreeMap<usize, IgPoint>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl IgCurve {
    pub fn means(&self) -> Vec<f64> {
        self.points.values().map(|p| p.mean).collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.means().windows(2).all(|w| w[0] <= w[1])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("depth,mean_ig,n\n");
        for (d, p) in &self.points {
            s.push_str(&format!("{d},{:.4},{}\n", p.mean, p.count));
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IgOptions {
    /// Concurrent judge calls.
    pub parallel: usize,
}

impl Default for IgOptions {
    fn default() -> Self {
        Self { parallel: 4 }
    }
}

struct Job {
    record: String,
    depth: usize,
    query: String,
    subqueries: Vec<(NodeId, String)>,
}

/// Subqueries (with their tags) at depth ≤ d for every d in 1..=D. A record
/// of depth 0 is judged once at depth 0 on its own question.
fn jobs_for(record: &RunRecord) -> Vec<Job> {
    if record.depth == 0 {
        return vec![Job {
            record: record.id.clone(),
            depth: 0,
            query: record.question.clone(),
            subqueries: vec![(NodeId::ROOT, record.question.clone())],
        }];
    }
    let mut nodes: Vec<(NodeId, String)> = record
        .trace
        .nodes
        .iter()
        .filter(|n| !n.node.is_root())
        .map(|n| (n.node, n.template.clone()))
        .collect();
    nodes.sort_by_key(|(id, _)| *id);
    (1..=record.depth)
        .map(|d| Job {
            record: record.id.clone(),
            depth: d,
            query: record.question.clone(),
            subqueries: nodes
                .iter()
                .filter(|(id, _)| id.depth() as usize <= d)
                .cloned()
                .collect(),
        })
        .collect()
}

/// Scores every record at each depth it reaches and averages per depth.
/// Unparseable scores and judge failures are skipped with a warning.
pub async fn info_gain_curve<B: LlmBackend + ?Sized>(
    records: &[RunRecord],
    judge: &B,
    options: IgOptions,
) -> IgCurve {
    let jobs: Vec<Job> = records.iter().flat_map(jobs_for).collect();
    let results: Vec<(usize, Result<u8, String>)> = stream::iter(jobs)
        .map(|job| async move {
            let prompt = ig_judge_prompt(&job.query, &job.subqueries);
            let score = match judge.generate(&prompt).await {
                Ok(c) => parse_judge_score(&c.text).ok_or_else(|| {
                    format!("{} depth {}: judge output unparseable: {:?}", job.record, job.depth, c.text)
                }),
                Err(e) => Err(format!("{} depth {}: judge failed: {e}", job.record, job.depth)),
            };
            (job.depth, score)
        })
        .buffered(options.parallel.max(1))
        .collect()
        .await;
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (depth, score) in results {
        match score {
            Ok(s) => {
                let e = sums.entry(depth).or_default();
                e.0 += s as f64;
                e.1 += 1;
            }
            Err(w) => warnings.push(w),
        }
    }
    IgCurve {
        points: sums
            .into_iter()
            .map(|(d, (sum, count))| (d, IgPoint { mean: sum / count as f64, count }))
            .collect(),
        warnings,
    }
}
