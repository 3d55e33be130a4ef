//! Plan execution and the baseline pipelines.
//!
//! [`Engine::run_plan`] walks a [`ReasoningDag`] layer by layer. Nodes of one
//! layer run concurrently (up to `max_parallel`); a layer starts only after
//! the previous one has finished. A node's prompt holds its own question, its
//! retrievals, and the question/answer pairs of its direct parents.

mod accounting;
mod aggregate;
mod cache;
mod pipeline;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::prompts::{
    answer_prompt, clean_tag_replace_output, tag_replace_prompt, KnownAnswer, ParentAnswer,
};
use crate::backend::{
    extract_json_response, generate_with_retry, BackendError, Completion, LlmBackend,
    PromptBundle, RetryPolicy,
};
use crate::parser::{extract_tags, split_template, TemplateSegment};
use crate::plan::{AnswerTag, NodeId, PlanNode, ReasoningDag};
use crate::retrieval::{RetrievalError, RetrievalSet, Retriever, DEFAULT_K};

pub use accounting::{context_cost, latency_model, ContextAccounting, ContextReport, LatencyReport};
pub use aggregate::{aggregate, normalize_boolean};
pub use cache::{CachedPlan, PlanCache};
pub use pipeline::{PlanSource, PlannedQuery, RunRecord, RunStatus, Timing, TokenTotals, TraceNodes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    VanillaLlm,
    VanillaRag,
    CotRag,
    QdRag,
    /// Query decomposition with a fresh retrieval per subquery.
    QdRagSubq,
    Plan,
    PlanSubq,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::VanillaLlm,
        Mode::VanillaRag,
        Mode::CotRag,
        Mode::QdRag,
        Mode::QdRagSubq,
        Mode::Plan,
        Mode::PlanSubq,
    ];

    pub fn is_plan(self) -> bool {
        matches!(self, Mode::Plan | Mode::PlanSubq)
    }

    /// Whether each node or step retrieves for its own question.
    pub fn per_node_retrieval(self) -> bool {
        matches!(self, Mode::PlanSubq | Mode::QdRagSubq)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::VanillaLlm => "VanillaLLM",
            Mode::VanillaRag => "VanillaRAG",
            Mode::CotRag => "CoTRAG",
            Mode::QdRag => "QDRAG",
            Mode::QdRagSubq => "QDRAGSubQ",
            Mode::Plan => "Plan",
            Mode::PlanSubq => "PlanSubQ",
        };
        f.write_str(s)
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, '-' | '_' | ' ' | '*'))
        .flat_map(char::to_lowercase)
        .collect()
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "vanillallm" | "llm" => Ok(Mode::VanillaLlm),
            "vanillarag" | "rag" => Ok(Mode::VanillaRag),
            "cotrag" | "cot" => Ok(Mode::CotRag),
            "qdrag" | "qd" => Ok(Mode::QdRag),
            "qdragsubq" | "qdsubq" => Ok(Mode::QdRagSubq),
            "plan" | "planrag" => Ok(Mode::Plan),
            "plansubq" | "planragsubq" => Ok(Mode::PlanSubq),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagResolution {
    /// Literal substitution of each tag by its target's answer.
    #[default]
    Deterministic,
    /// Ask the model to splice answers in, falling back to substitution.
    Llm,
}

impl FromStr for TagResolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "deterministic" | "literal" => Ok(TagResolution::Deterministic),
            "llm" => Ok(TagResolution::Llm),
            _ => Err(format!("unknown tag resolution {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    SinkAnswer,
    /// Map the sink answer onto "yes"/"no".
    BooleanNormalize,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "sinkanswer" | "sink" => Ok(Aggregation::SinkAnswer),
            "booleannormalize" | "boolean" | "bool" => Ok(Aggregation::BooleanNormalize),
            _ => Err(format!("unknown aggregation {s:?}")),
        }
    }
}

/// Shared flag for stopping a run at the next layer boundary.
#[derive(Debug, Clone, Default)]
pub struct CancelFlag(Arc<AtomicBool>);

impl CancelFlag {
    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub k: usize,
    pub max_parallel: usize,
    pub tag_resolution: TagResolution,
    pub aggregation: Aggregation,
    pub retry: RetryPolicy,
    /// Limit for a single backend call.
    pub timeout: Option<Duration>,
    /// Extra plan-generation attempts after an unusable plan.
    pub plan_retries: u32,
    pub role_tag_wrapping: bool,
    pub cancel: CancelFlag,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::PlanSubq,
            k: DEFAULT_K,
            max_parallel: 4,
            tag_resolution: TagResolution::Deterministic,
            aggregation: Aggregation::SinkAnswer,
            retry: RetryPolicy::default(),
            timeout: Some(Duration::from_secs(120)),
            plan_retries: 1,
            role_tag_wrapping: false,
            cancel: CancelFlag::default(),
        }
    }
}

impl RunConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.k == 0 {
            return Err(ExecError::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_parallel == 0 {
            return Err(ExecError::InvalidConfig("max_parallel must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("no answer available for {0}")]
    MissingParentAnswer(AnswerTag),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum NodeStatus {
    Answered,
    /// Root of a decomposed plan: supplies the query text (and, in shared
    /// retrieval mode, the documents) but is not answered itself.
    Seeded,
    Failed { error: String },
    Skipped { failed_ancestor: NodeId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResult {
    pub node: NodeId,
    pub template: String,
    pub materialized_question: String,
    pub retrievals: RetrievalSet,
    pub answer: String,
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasoning_steps: Vec<String>,
    #[serde(with = "crate::serde_duration")]
    pub gen_time: Duration,
    #[serde(with = "crate::serde_duration")]
    pub ret_time: Duration,
    /// Offsets from the start of the run.
    #[serde(with = "crate::serde_duration")]
    pub started: Duration,
    #[serde(with = "crate::serde_duration")]
    pub finished: Duration,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl NodeResult {
    pub fn new(node: NodeId, template: impl Into<String>, k: usize) -> Self {
        let template = template.into();
        Self {
            node,
            materialized_question: String::new(),
            retrievals: RetrievalSet::empty("", k),
            answer: String::new(),
            status: NodeStatus::Answered,
            reasoning_steps: Vec::new(),
            gen_time: Duration::ZERO,
            ret_time: Duration::ZERO,
            started: Duration::ZERO,
            finished: Duration::ZERO,
            input_tokens: 0,
            output_tokens: 0,
            retries: 0,
            warnings: Vec::new(),
            template,
        }
    }

    pub fn is_answered(&self) -> bool {
        self.status == NodeStatus::Answered
    }

    /// Whether the node ran (answered or seeded) rather than failing or being skipped.
    pub fn executed(&self) -> bool {
        matches!(self.status, NodeStatus::Answered | NodeStatus::Seeded)
    }

    fn blocker(&self) -> Option<NodeId> {
        match &self.status {
            NodeStatus::Failed { .. } => Some(self.node),
            NodeStatus::Skipped { failed_ancestor } => Some(*failed_ancestor),
            _ => None,
        }
    }

    fn record(&mut self, completion: &Completion, retries: u32) {
        self.input_tokens += completion.input_tokens;
        self.output_tokens += completion.output_tokens;
        self.retries += retries;
    }

    fn fail(mut self, error: &ExecError, t0: Instant) -> Self {
        self.status = NodeStatus::Failed {
            error: error.to_string(),
        };
        self.finished = t0.elapsed();
        self
    }

    /// Zeroes all timing fields.
    pub fn normalized(mut self) -> Self {
        self.gen_time = Duration::ZERO;
        self.ret_time = Duration::ZERO;
        self.started = Duration::ZERO;
        self.finished = Duration::ZERO;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    pub dag: ReasoningDag,
    pub mode: Mode,
    pub nodes: BTreeMap<NodeId, NodeResult>,
    pub final_answer: Option<String>,
    pub wall_time: Duration,
    pub status: RunStatus,
    pub warnings: Vec<String>,
}

impl ExecutionTrace {
    pub fn node(&self, id: NodeId) -> Option<&NodeResult> {
        self.nodes.get(&id)
    }

    pub fn answered(&self) -> impl Iterator<Item = &NodeResult> {
        self.nodes.values().filter(|n| n.is_answered())
    }

    pub fn tokens(&self) -> TokenTotals {
        TokenTotals {
            input: self.nodes.values().map(|n| n.input_tokens).sum(),
            output: self.nodes.values().map(|n| n.output_tokens).sum(),
        }
    }
}

/// Replaces each `<AI.J>` in `template` with the answer of node `QI.J`.
pub fn substitute_tags(
    template: &str,
    answers: &BTreeMap<NodeId, String>,
) -> Result<String, ExecError> {
    let mut out = String::with_capacity(template.len());
    for seg in split_template(template) {
        match seg {
            TemplateSegment::Text(t) => out.push_str(t),
            TemplateSegment::Tag(tag) => {
                let answer = answers
                    .get(&tag.target)
                    .ok_or(ExecError::MissingParentAnswer(tag))?;
                out.push_str(answer.trim());
            }
        }
    }
    Ok(out)
}

/// Backends and retriever shared by every run.
#[derive(Clone)]
pub struct Engine {
    pub generator: Arc<dyn LlmBackend>,
    pub planner: Arc<dyn LlmBackend>,
    pub retriever: Arc<dyn Retriever>,
    pub plan_cache: Option<PlanCache>,
}

impl Engine {
    pub fn new(generator: Arc<dyn LlmBackend>, retriever: Arc<dyn Retriever>) -> Self {
        Self {
            planner: generator.clone(),
            generator,
            retriever,
            plan_cache: None,
        }
    }

    pub fn with_planner(mut self, planner: Arc<dyn LlmBackend>) -> Self {
        self.planner = planner;
        self
    }

    pub fn with_plan_cache(mut self, cache: PlanCache) -> Self {
        self.plan_cache = Some(cache);
        self
    }

    async fn call(
        &self,
        backend: &dyn LlmBackend,
        bundle: PromptBundle,
        cfg: &RunConfig,
    ) -> Result<(Completion, u32), BackendError> {
        let bundle = bundle.with_role_tag_wrapping(cfg.role_tag_wrapping);
        generate_with_retry(backend, &bundle, cfg.retry, cfg.timeout).await
    }

    async fn retrieve_timed(
        &self,
        query: &str,
        k: usize,
        result: &mut NodeResult,
    ) -> Result<(), ExecError> {
        let start = Instant::now();
        let set = self.retriever.retrieve(query, k).await;
        result.ret_time += start.elapsed();
        result.retrievals = set?;
        Ok(())
    }

    /// Resolves the tags of `node` against its parents' answers.
    pub async fn materialize_subquery(
        &self,
        node: &PlanNode,
        parents: &[&NodeResult],
        cfg: &RunConfig,
        result: &mut NodeResult,
    ) -> Result<String, ExecError> {
        let answers: BTreeMap<NodeId, String> = parents
            .iter()
            .filter(|p| p.is_answered())
            .map(|p| (p.node, p.answer.clone()))
            .collect();
        let literal = substitute_tags(&node.template, &answers)?;
        if node.tags.is_empty() || cfg.tag_resolution == TagResolution::Deterministic {
            return Ok(literal);
        }
        let tagged_parents: Vec<ParentAnswer> = parents
            .iter()
            .filter(|p| node.tags.iter().any(|t| t.target == p.node))
            .map(|p| ParentAnswer {
                id: p.node,
                question: p.materialized_question.clone(),
                answer: p.answer.clone(),
            })
            .collect();
        let bundle = tag_replace_prompt(node.id, &node.template, &tagged_parents);
        match self.call(self.generator.as_ref(), bundle, cfg).await {
            Ok((completion, retries)) => {
                result.record(&completion, retries);
                let cleaned = clean_tag_replace_output(&completion.text, node.id);
                if cleaned.is_empty() || !extract_tags(&cleaned).is_empty() {
                    result
                        .warnings
                        .push("tag replacement output unusable; substituted literally".into());
                    Ok(literal)
                } else {
                    Ok(cleaned)
                }
            }
            Err(e) => {
                result
                    .warnings
                    .push(format!("tag replacement failed ({e}); substituted literally"));
                Ok(literal)
            }
        }
    }

    async fn seed_root(&self, dag: &ReasoningDag, cfg: &RunConfig, t0: Instant) -> NodeResult {
        let mut r = NodeResult::new(NodeId::ROOT, dag.original_query(), cfg.k);
        r.started = t0.elapsed();
        r.status = NodeStatus::Seeded;
        r.materialized_question = dag.original_query().to_string();
        r.retrievals = RetrievalSet::empty(dag.original_query(), cfg.k);
        if !cfg.mode.per_node_retrieval() {
            if let Err(e) = self.retrieve_timed(dag.original_query(), cfg.k, &mut r).await {
                return r.fail(&e, t0);
            }
        }
        r.finished = t0.elapsed();
        r
    }

    async fn execute_node(
        &self,
        dag: &ReasoningDag,
        id: NodeId,
        slots: &BTreeMap<NodeId, NodeResult>,
        shared: Option<&RetrievalSet>,
        cfg: &RunConfig,
        t0: Instant,
    ) -> NodeResult {
        let node = dag.node(id).expect("layer node exists");
        let mut r = NodeResult::new(id, node.template.clone(), cfg.k);
        r.started = t0.elapsed();
        let parents: Vec<&NodeResult> = dag
            .parents(id)
            .iter()
            .filter_map(|p| slots.get(p))
            .filter(|p| p.is_answered())
            .collect();

        let gen_start = Instant::now();
        let question = if id.is_root() {
            dag.original_query().to_string()
        } else {
            match self.materialize_subquery(node, &parents, cfg, &mut r).await {
                Ok(q) => q,
                Err(e) => return r.fail(&e, t0),
            }
        };
        r.gen_time += gen_start.elapsed();
        r.materialized_question = question.clone();

        match shared {
            Some(set) => r.retrievals = set.clone(),
            None => {
                if let Err(e) = self.retrieve_timed(&question, cfg.k, &mut r).await {
                    return r.fail(&e, t0);
                }
            }
        }

        let known: Vec<KnownAnswer> = parents
            .iter()
            .map(|p| KnownAnswer {
                question: p.materialized_question.clone(),
                answer: p.answer.clone(),
            })
            .collect();
        let bundle = answer_prompt(&question, &r.retrievals.texts(), &known);
        let gen_start = Instant::now();
        let outcome = self.call(self.generator.as_ref(), bundle, cfg).await;
        r.gen_time += gen_start.elapsed();
        match outcome {
            Ok((completion, retries)) => {
                r.record(&completion, retries);
                r.answer = match extract_json_response(&completion.text, "Response") {
                    Ok(a) => a,
                    Err(_) => {
                        r.warnings
                            .push("answer was not the expected JSON; using raw text".into());
                        completion.text.trim().to_string()
                    }
                };
            }
            Err(e) => return r.fail(&ExecError::Backend(e), t0),
        }
        r.finished = t0.elapsed();
        r
    }

    /// Executes `dag` and aggregates the sink answer. The caller supplies the plan.
    pub async fn run_plan(&self, dag: &ReasoningDag, cfg: &RunConfig) -> ExecutionTrace {
        let t0 = Instant::now();
        let mut slots: BTreeMap<NodeId, NodeResult> = BTreeMap::new();
        let mut warnings = Vec::new();
        let mut shared: Option<RetrievalSet> = None;
        let mut cancelled = false;

        for layer in dag.layers() {
            if cfg.cancel.is_cancelled() {
                cancelled = true;
                break;
            }
            if layer == [NodeId::ROOT] && !dag.is_simple() {
                let root = self.seed_root(dag, cfg, t0).await;
                if root.executed() && !cfg.mode.per_node_retrieval() {
                    shared = Some(root.retrievals.clone());
                }
                slots.insert(NodeId::ROOT, root);
                continue;
            }
            let mut runnable = Vec::new();
            for id in layer {
                let blocker = dag
                    .parents(id)
                    .iter()
                    .find_map(|p| slots.get(p).and_then(NodeResult::blocker));
                match blocker {
                    Some(failed_ancestor) => {
                        let template = dag.node(id).map(|n| n.template.clone()).unwrap_or_default();
                        let mut r = NodeResult::new(id, template, cfg.k);
                        r.status = NodeStatus::Skipped { failed_ancestor };
                        slots.insert(id, r);
                    }
                    None => runnable.push(id),
                }
            }
            let results: Vec<NodeResult> = {
                let slots = &slots;
                let shared = shared.as_ref();
                stream::iter(runnable)
                    .map(|id| self.execute_node(dag, id, slots, shared, cfg, t0))
                    .buffer_unordered(cfg.max_parallel.max(1))
                    .collect()
                    .await
            };
            for r in results {
                slots.insert(r.node, r);
            }
        }

        let wall_time = t0.elapsed();
        let sink = slots.get(&dag.sink()).filter(|s| s.is_answered());
        let (final_answer, status) = match sink {
            Some(s) => {
                let (answer, warning) = aggregate(&s.answer, cfg.aggregation);
                warnings.extend(warning);
                (Some(answer), RunStatus::Complete)
            }
            None if cancelled => (None, RunStatus::Cancelled),
            None => (None, RunStatus::Partial),
        };
        for r in slots.values() {
            if let NodeStatus::Failed { error } = &r.status {
                warnings.push(format!("{} failed: {error}", r.node));
            }
        }
        ExecutionTrace {
            dag: dag.clone(),
            mode: cfg.mode,
            nodes: slots,
            final_answer,
            wall_time,
            status,
            warnings,
        }
    }
}

#[cfg(test)]
mod tests;
