//! End-to-end runs for every mode and the record they produce.

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    aggregate, context_cost, latency_model, ContextReport, Engine, ExecError, ExecutionTrace, Mode,
    NodeResult, NodeStatus, RunConfig,
};
use crate::backend::prompts::{baseline_prompt, plan_prompt, BaselinePrompt, KnownAnswer};
use crate::backend::{extract_json_object, extract_json_response};
use crate::executor::cache::CachedPlan;
use crate::parser::{parse_plan_text, parse_string_list};
use crate::plan::{CanonicalPlan, DagBuilder, NodeId, ReasoningDag};
use crate::retrieval::{Document, RetrievalSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Some node failed; the trace keeps whatever finished.
    Partial,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Generated,
    Cached,
    /// Planning failed; the query runs as a single node.
    Fallback,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    #[serde(rename = "in")]
    pub input: u64,
    #[serde(rename = "out")]
    pub output: u64,
}

impl std::ops::AddAssign for TokenTotals {
    fn add_assign(&mut self, rhs: Self) {
        self.input += rhs.input;
        self.output += rhs.output;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    #[serde(with = "crate::serde_duration")]
    pub wall: Duration,
    /// Time spent obtaining the plan (zero for cached plans and baselines).
    #[serde(with = "crate::serde_duration")]
    pub plan: Duration,
    #[serde(with = "crate::serde_duration")]
    pub t_seq: Duration,
    #[serde(with = "crate::serde_duration")]
    pub t_plan: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceNodes {
    pub nodes: Vec<NodeResult>,
}

/// One dataset item's run, as written to records JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub mode: Mode,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<CanonicalPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_source: Option<PlanSource>,
    /// Reasoning depth: plan depth, number of decomposition steps, or 0.
    pub depth: usize,
    pub trace: TraceNodes,
    pub final_answer: String,
    pub tokens: TokenTotals,
    pub timing: Timing,
    pub context: ContextReport,
    pub status: RunStatus,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunRecord {
    /// The record with every duration zeroed, for comparing runs.
    pub fn normalized(&self) -> Self {
        let mut r = self.clone();
        r.timing = Timing::default();
        r.trace.nodes = r.trace.nodes.into_iter().map(NodeResult::normalized).collect();
        r
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    /// Every retrieved document across nodes, first occurrence of each id kept.
    pub fn retrieved_documents(&self) -> Vec<&Document> {
        let mut seen = HashSet::new();
        self.trace
            .nodes
            .iter()
            .flat_map(|n| n.retrievals.documents.iter())
            .filter(|d| seen.insert(d.doc_id.as_str()))
            .collect()
    }

    /// The plan as a dag, if the record carries one.
    pub fn dag(&self) -> Option<ReasoningDag> {
        self.plan
            .as_ref()
            .and_then(|p| ReasoningDag::from_canonical(p).ok())
    }
}

/// Result of plan generation for one query.
#[derive(Debug, Clone)]
pub struct PlannedQuery {
    pub dag: ReasoningDag,
    pub source: PlanSource,
    pub warnings: Vec<String>,
    pub tokens: TokenTotals,
    pub elapsed: Duration,
}

impl Engine {
    /// Obtains a plan: cache first, then the planner with `plan_retries`
    /// extra attempts, then the single-node plan as a last resort.
    pub async fn plan_query(&self, query: &str, cfg: &RunConfig) -> PlannedQuery {
        let start = Instant::now();
        let mut warnings = Vec::new();
        let mut tokens = TokenTotals::default();
        if let Some(cache) = &self.plan_cache {
            if let Some(hit) = cache.get(query) {
                match ReasoningDag::from_canonical(&hit.plan) {
                    Ok(dag) => {
                        return PlannedQuery {
                            dag,
                            source: PlanSource::Cached,
                            warnings: hit.warnings,
                            tokens,
                            elapsed: start.elapsed(),
                        }
                    }
                    Err(e) => warnings.push(format!("ignoring invalid cached plan: {e}")),
                }
            }
        }
        for attempt in 0..=cfg.plan_retries {
            let completion = match self.call(self.planner.as_ref(), plan_prompt(query), cfg).await {
                Ok((c, _)) => c,
                Err(e) => {
                    warnings.push(format!("plan attempt {} failed: {e}", attempt + 1));
                    continue;
                }
            };
            tokens.input += completion.input_tokens;
            tokens.output += completion.output_tokens;
            match parse_plan_text(&completion.text, query) {
                Ok(parsed) => {
                    let plan_warnings = parsed.warnings.clone();
                    let dag = parsed.into_dag(query);
                    warnings.extend(plan_warnings.iter().cloned());
                    if let Some(cache) = &self.plan_cache {
                        let entry = CachedPlan {
                            query: query.to_string(),
                            plan: dag.to_canonical(),
                            warnings: plan_warnings,
                        };
                        if let Err(e) = cache.put(&entry) {
                            warnings.push(format!("could not write plan cache: {e}"));
                        }
                    }
                    return PlannedQuery {
                        dag,
                        source: PlanSource::Generated,
                        warnings,
                        tokens,
                        elapsed: start.elapsed(),
                    };
                }
                Err(e) => warnings.push(format!("plan attempt {} unusable: {e}", attempt + 1)),
            }
        }
        warnings.push("no usable plan; answering the query as a single node".into());
        PlannedQuery {
            dag: ReasoningDag::simple(query),
            source: PlanSource::Fallback,
            warnings,
            tokens,
            elapsed: start.elapsed(),
        }
    }

    /// Runs one query in the configured mode. Always returns a record.
    pub async fn run_pipeline(&self, id: &str, question: &str, cfg: &RunConfig) -> RunRecord {
        let t0 = Instant::now();
        let question = question.trim();
        if let Err(e) = cfg.validate() {
            let trace = failed_trace(question, cfg.mode, &e);
            return finish_record(id, question, trace, None, t0);
        }
        match cfg.mode {
            Mode::Plan | Mode::PlanSubq => {
                let planned = self.plan_query(question, cfg).await;
                let trace = self.run_plan(&planned.dag, cfg).await;
                finish_record(id, question, trace, Some(planned), t0)
            }
            Mode::VanillaLlm | Mode::VanillaRag | Mode::CotRag => {
                let trace = self.run_single(question, cfg).await;
                finish_record(id, question, trace, None, t0)
            }
            Mode::QdRag | Mode::QdRagSubq => {
                let trace = self.run_decomposition(question, cfg).await;
                finish_record(id, question, trace, None, t0)
            }
        }
    }

    async fn run_single(&self, question: &str, cfg: &RunConfig) -> ExecutionTrace {
        let t0 = Instant::now();
        let dag = ReasoningDag::simple(question);
        let mut r = NodeResult::new(NodeId::ROOT, question, cfg.k);
        r.materialized_question = question.to_string();
        r.retrievals = RetrievalSet::empty(question, cfg.k);
        let result = async {
            if cfg.mode != Mode::VanillaLlm {
                self.retrieve_timed(question, cfg.k, &mut r).await?;
            }
            let texts = r.retrievals.texts();
            let bundle = match cfg.mode {
                Mode::VanillaLlm => baseline_prompt::<&str>(BaselinePrompt::VanillaLlm { query: question }),
                Mode::CotRag => baseline_prompt(BaselinePrompt::Cot {
                    query: question,
                    retrievals: &texts,
                }),
                _ => baseline_prompt(BaselinePrompt::VanillaRag {
                    query: question,
                    retrievals: &texts,
                }),
            };
            let start = Instant::now();
            let outcome = self.call(self.generator.as_ref(), bundle, cfg).await;
            r.gen_time += start.elapsed();
            let (completion, retries) = outcome?;
            r.record(&completion, retries);
            r.answer = response_or_raw(&completion.text, &mut r.warnings);
            if cfg.mode == Mode::CotRag {
                r.reasoning_steps = reasoning_steps(&completion.text);
            }
            Ok::<(), ExecError>(())
        }
        .await;
        let mut r = match result {
            Ok(()) => r,
            Err(e) => r.fail(&e, t0),
        };
        r.finished = t0.elapsed();
        single_node_trace(dag, cfg, r, t0)
    }

    async fn run_decomposition(&self, question: &str, cfg: &RunConfig) -> ExecutionTrace {
        let t0 = Instant::now();
        let mut warnings = Vec::new();
        let mut root = NodeResult::new(NodeId::ROOT, question, cfg.k);
        root.status = NodeStatus::Seeded;
        root.materialized_question = question.to_string();
        root.retrievals = RetrievalSet::empty(question, cfg.k);

        let split = baseline_prompt::<&str>(BaselinePrompt::QdSplit { query: question });
        let start = Instant::now();
        let outcome = self.call(self.generator.as_ref(), split, cfg).await;
        root.gen_time += start.elapsed();
        let mut subqueries = match outcome {
            Ok((completion, retries)) => {
                root.record(&completion, retries);
                match parse_string_list(&completion.text) {
                    Ok(list) => list,
                    Err(e) => {
                        warnings.push(format!("unusable decomposition ({e}); using the query itself"));
                        Vec::new()
                    }
                }
            }
            Err(e) => {
                warnings.push(format!("decomposition failed ({e}); using the query itself"));
                Vec::new()
            }
        };
        subqueries.retain(|s| !s.trim().is_empty());
        if subqueries.is_empty() {
            subqueries.push(question.to_string());
        }
        let dag = match chain_dag(question, &subqueries) {
            Ok(dag) => dag,
            Err(e) => {
                warnings.push(format!("decomposition is not a valid chain ({e}); using the query itself"));
                subqueries = vec![question.to_string()];
                chain_dag(question, &subqueries).expect("single-step chain is valid")
            }
        };

        let shared = !cfg.mode.per_node_retrieval();
        if shared {
            if let Err(e) = self.retrieve_timed(question, cfg.k, &mut root).await {
                root = root.fail(&e, t0);
            }
        }
        root.finished = t0.elapsed();

        let mut slots = BTreeMap::new();
        let mut blocker = root.blocker();
        let shared_set = root.retrievals.clone();
        slots.insert(NodeId::ROOT, root);
        let mut known: Vec<KnownAnswer> = Vec::new();
        for (i, sub) in subqueries.iter().enumerate() {
            let id = NodeId::new(i as u32 + 1, 1).expect("positive index");
            let mut r = NodeResult::new(id, sub.clone(), cfg.k);
            if let Some(failed_ancestor) = blocker {
                r.status = NodeStatus::Skipped { failed_ancestor };
                slots.insert(id, r);
                continue;
            }
            if cfg.cancel.is_cancelled() {
                break;
            }
            r.started = t0.elapsed();
            r.materialized_question = sub.clone();
            let result = async {
                if shared {
                    r.retrievals = shared_set.clone();
                } else {
                    self.retrieve_timed(sub, cfg.k, &mut r).await?;
                }
                let texts = r.retrievals.texts();
                let bundle = baseline_prompt(BaselinePrompt::QdAnswer {
                    query: sub,
                    retrievals: &texts,
                    known: &known,
                });
                let start = Instant::now();
                let outcome = self.call(self.generator.as_ref(), bundle, cfg).await;
                r.gen_time += start.elapsed();
                let (completion, retries) = outcome?;
                r.record(&completion, retries);
                r.answer = response_or_raw(&completion.text, &mut r.warnings);
                Ok::<(), ExecError>(())
            }
            .await;
            let r = match result {
                Ok(()) => {
                    r.finished = t0.elapsed();
                    r
                }
                Err(e) => r.fail(&e, t0),
            };
            if r.is_answered() {
                known.push(KnownAnswer {
                    question: sub.clone(),
                    answer: r.answer.clone(),
                });
            } else {
                blocker = r.blocker();
            }
            slots.insert(id, r);
        }

        let sink = slots.get(&dag.sink()).filter(|s| s.is_answered());
        let (final_answer, status) = match sink {
            Some(s) => {
                let (answer, warning) = aggregate(&s.answer, cfg.aggregation);
                warnings.extend(warning);
                (Some(answer), RunStatus::Complete)
            }
            None if cfg.cancel.is_cancelled() => (None, RunStatus::Cancelled),
            None => (None, RunStatus::Partial),
        };
        for r in slots.values() {
            if let NodeStatus::Failed { error } = &r.status {
                warnings.push(format!("{} failed: {error}", r.node));
            }
        }
        ExecutionTrace {
            dag,
            mode: cfg.mode,
            nodes: slots,
            final_answer,
            wall_time: t0.elapsed(),
            status,
            warnings,
        }
    }
}

/// `Q → Q1.1 → Q2.1 → …`, one node per decomposition step.
fn chain_dag(question: &str, steps: &[String]) -> Result<ReasoningDag, crate::plan::PlanError> {
    let mut b = DagBuilder::new(question);
    let mut prev = NodeId::ROOT;
    for (i, s) in steps.iter().enumerate() {
        let id = NodeId::new(i as u32 + 1, 1).expect("positive index");
        b.node(id, s)?;
        b.edge(prev, id);
        prev = id;
    }
    b.build().map(|(dag, _)| dag)
}

fn response_or_raw(text: &str, warnings: &mut Vec<String>) -> String {
    match extract_json_response(text, "Response") {
        Ok(a) => a,
        Err(_) => {
            warnings.push("answer was not the expected JSON; using raw text".into());
            text.trim().to_string()
        }
    }
}

fn reasoning_steps(text: &str) -> Vec<String> {
    let Some(obj) = extract_json_object(text) else {
        return Vec::new();
    };
    let value = obj.get("Reasoning_steps").or_else(|| {
        obj.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("reasoning_steps"))
            .map(|(_, v)| v)
    });
    match value {
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s.trim().to_string(),
                other => other.to_string(),
            })
            .collect(),
        Some(serde_json::Value::String(s)) => vec![s.trim().to_string()],
        _ => Vec::new(),
    }
}

fn single_node_trace(dag: ReasoningDag, cfg: &RunConfig, r: NodeResult, t0: Instant) -> ExecutionTrace {
    let mut warnings = Vec::new();
    let (final_answer, status) = if r.is_answered() {
        let (answer, warning) = aggregate(&r.answer, cfg.aggregation);
        warnings.extend(warning);
        (Some(answer), RunStatus::Complete)
    } else {
        if let NodeStatus::Failed { error } = &r.status {
            warnings.push(format!("{} failed: {error}", r.node));
        }
        (None, RunStatus::Failed)
    };
    ExecutionTrace {
        dag,
        mode: cfg.mode,
        nodes: BTreeMap::from([(NodeId::ROOT, r)]),
        final_answer,
        wall_time: t0.elapsed(),
        status,
        warnings,
    }
}

fn failed_trace(question: &str, mode: Mode, error: &ExecError) -> ExecutionTrace {
    ExecutionTrace {
        dag: ReasoningDag::simple(question),
        mode,
        nodes: BTreeMap::new(),
        final_answer: None,
        wall_time: Duration::ZERO,
        status: RunStatus::Failed,
        warnings: vec![error.to_string()],
    }
}

fn finish_record(
    id: &str,
    question: &str,
    trace: ExecutionTrace,
    planned: Option<PlannedQuery>,
    t0: Instant,
) -> RunRecord {
    let latency = latency_model(trace.nodes.values());
    let context = context_cost(&trace);
    let mut tokens = trace.tokens();
    let mut warnings = Vec::new();
    let (plan, plan_source, plan_time) = match planned {
        Some(p) => {
            tokens += p.tokens;
            warnings.extend(p.warnings);
            (Some(p.dag.to_canonical()), Some(p.source), p.elapsed)
        }
        None => (None, None, Duration::ZERO),
    };
    for n in trace.nodes.values() {
        warnings.extend(n.warnings.iter().map(|w| format!("{}: {w}", n.node)));
    }
    warnings.extend(trace.warnings.iter().cloned());
    let depth = trace.dag.reasoning_depth();
    RunRecord {
        id: id.to_string(),
        mode: trace.mode,
        question: question.to_string(),
        plan,
        plan_source,
        depth,
        final_answer: trace.final_answer.clone().unwrap_or_default(),
        tokens,
        timing: Timing {
            wall: t0.elapsed(),
            plan: plan_time,
            t_seq: latency.t_seq,
            t_plan: latency.t_plan,
        },
        context,
        status: trace.status,
        warnings,
        trace: TraceNodes {
            nodes: trace.nodes.into_values().collect(),
        },
    }
}
