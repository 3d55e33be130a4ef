//! Latency and context-size accounting over finished traces.
//!
//! Context sizes are counted in whitespace-delimited words.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ExecutionTrace, Mode, NodeResult, NodeStatus};
use crate::plan::NodeId;
use crate::retrieval::word_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Sum of per-node generation plus retrieval time.
    #[serde(with = "crate::serde_duration")]
    pub t_seq: Duration,
    /// Sum over depths of the slowest node at that depth.
    #[serde(with = "crate::serde_duration")]
    pub t_plan: Duration,
}

impl LatencyReport {
    pub fn speedup(&self) -> f64 {
        if self.t_plan.is_zero() {
            1.0
        } else {
            self.t_seq.as_secs_f64() / self.t_plan.as_secs_f64()
        }
    }
}

fn cost(n: &NodeResult) -> Duration {
    n.gen_time + n.ret_time
}

/// Sequential and layer-parallel time for the nodes that ran.
pub fn latency_model<'a>(nodes: impl IntoIterator<Item = &'a NodeResult>) -> LatencyReport {
    let mut t_seq = Duration::ZERO;
    let mut per_depth: BTreeMap<u32, Duration> = BTreeMap::new();
    for n in nodes {
        if matches!(n.status, NodeStatus::Skipped { .. }) {
            continue;
        }
        let c = cost(n);
        t_seq += c;
        let slot = per_depth.entry(n.node.depth()).or_default();
        *slot = (*slot).max(c);
    }
    LatencyReport {
        t_seq,
        t_plan: per_depth.values().sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextAccounting {
    /// Own question, own documents, and each parent's question and answer.
    ParentsOnly,
    /// Main query plus every earlier step's question, answer and documents.
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextReport {
    pub accounting: ContextAccounting,
    pub per_node: BTreeMap<NodeId, usize>,
    pub total: usize,
    pub max: usize,
}

fn docs_words(n: &NodeResult) -> usize {
    n.retrievals.documents.iter().map(|d| word_count(&d.text)).sum()
}

/// Context size of every answered node. Query-decomposition runs use the
/// cumulative accounting; all other modes count parents only.
pub fn context_cost(trace: &ExecutionTrace) -> ContextReport {
    let accounting = match trace.mode {
        Mode::QdRag | Mode::QdRagSubq => ContextAccounting::Cumulative,
        _ => ContextAccounting::ParentsOnly,
    };
    let mut per_node = BTreeMap::new();
    match accounting {
        ContextAccounting::ParentsOnly => {
            for n in trace.answered() {
                let parents: usize = trace
                    .dag
                    .parents(n.node)
                    .iter()
                    .filter_map(|p| trace.nodes.get(p))
                    .filter(|p| p.is_answered())
                    .map(|p| word_count(&p.materialized_question) + word_count(&p.answer))
                    .sum();
                let c = word_count(&n.materialized_question) + docs_words(n) + parents;
                per_node.insert(n.node, c);
            }
        }
        ContextAccounting::Cumulative => {
            let mut running = word_count(trace.dag.original_query());
            let mut steps: Vec<&NodeResult> =
                trace.answered().filter(|n| !n.node.is_root()).collect();
            steps.sort_by_key(|n| n.node.depth());
            for n in steps {
                running += word_count(&n.materialized_question) + word_count(&n.answer) + docs_words(n);
                per_node.insert(n.node, running);
            }
        }
    }
    ContextReport {
        accounting,
        total: per_node.values().sum(),
        max: per_node.values().copied().max().unwrap_or(0),
        per_node,
    }
}
