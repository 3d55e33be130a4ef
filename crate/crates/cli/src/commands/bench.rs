use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use planrag::backend::{PromptPurpose, ScriptedBackend};
use planrag::eval::read_jsonl;
use planrag::executor::{context_cost, latency_model, ContextReport, Engine, ExecutionTrace, LatencyReport, Mode, NodeStatus, RunConfig, RunRecord};
use planrag::plan::{CanonicalPlan, DagBuilder, NodeId, ReasoningDag};
use planrag::retrieval::ScriptedRetriever;
use serde::Serialize;

use crate::{BenchArgs, CliError, Outcome};

fn nid(depth: u32, position: u32) -> NodeId {
    NodeId::new(depth, position).expect("positive coordinates")
}

/// Two independent lookups feeding two dependent ones that join in a sink.
pub fn cricket_dag() -> ReasoningDag {
    let mut b = DagBuilder::new("How far apart are the venues of the last two finals?");
    let nodes = [
        (nid(1, 1), "Where was the last final held?"),
        (nid(1, 2), "Where was the second last final held?"),
        (nid(2, 1), "What are the coordinates of <A1.1>?"),
        (nid(2, 2), "What are the coordinates of <A1.2>?"),
        (nid(3, 1), "What is the distance between <A2.1> and <A2.2>?"),
    ];
    for (id, t) in nodes {
        b.node(id, t).expect("valid node");
    }
    b.edge(NodeId::ROOT, nid(1, 1))
        .edge(NodeId::ROOT, nid(1, 2))
        .edge(nid(1, 1), nid(2, 1))
        .edge(nid(1, 2), nid(2, 2))
        .edge(nid(2, 1), nid(3, 1))
        .edge(nid(2, 2), nid(3, 1));
    b.build().expect("cricket shape is valid").0
}

/// Q → Q1.1 → Q2.1 → … → Qn.1, each step naming the previous answer.
pub fn chain_dag(n: u32) -> ReasoningDag {
    let mut b = DagBuilder::new("chain query");
    let mut prev = NodeId::ROOT;
    for d in 1..=n {
        let template = if d == 1 {
            "step 1".to_string()
        } else {
            format!("step {d} after <A{}.1>", d - 1)
        };
        b.node(nid(d, 1), &template).expect("valid node");
        b.edge(prev, nid(d, 1));
        prev = nid(d, 1);
    }
    b.build().expect("chain is valid").0
}

pub fn parse_shape(spec: &str) -> Result<ReasoningDag, CliError> {
    if spec == "cricket" {
        return Ok(cricket_dag());
    }
    if let Some(n) = spec.strip_prefix("chain:") {
        let n: u32 = n
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::usage(format!("bad chain length in {spec:?}")))?;
        return Ok(chain_dag(n));
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| CliError::usage(format!("unknown shape {spec:?} and cannot read it as a file: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{spec}: {e}")))?;
    let plan = value.get("plan").cloned().unwrap_or(value);
    let plan: CanonicalPlan = serde_json::from_value(plan).map_err(|e| CliError::usage(format!("{spec}: {e}")))?;
    ReasoningDag::from_canonical(&plan).map_err(|e| CliError::usage(format!("{spec}: {e}")))
}

#[derive(Debug, Clone, Serialize)]
pub struct ShapeReport {
    pub nodes: usize,
    pub depth: usize,
    pub latency: LatencyReport,
    pub speedup: f64,
    pub context: ContextReport,
}

/// Runs `dag` against placeholder backends, then charges each generation
/// `gen_cost` and each retrieval `ret_cost` seconds.
pub async fn bench_shape(dag: &ReasoningDag, gen_cost: f64, ret_cost: f64) -> ShapeReport {
    let backend = ScriptedBackend::new().fallback(PromptPurpose::Answer, &[r#"{"Response": "answer"}"#]);
    let retriever = ScriptedRetriever::new().fallback(&["a retrieved passage of placeholder text"]);
    let engine = Engine::new(Arc::new(backend), Arc::new(retriever));
    let mut trace: ExecutionTrace = engine.run_plan(dag, &RunConfig::default().with_mode(Mode::PlanSubq)).await;
    for n in trace.nodes.values_mut() {
        if n.status == NodeStatus::Answered {
            n.gen_time = Duration::from_secs_f64(gen_cost.max(0.0));
            n.ret_time = if n.retrievals.query.is_empty() {
                Duration::ZERO
            } else {
                Duration::from_secs_f64(ret_cost.max(0.0))
            };
        }
    }
    let latency = latency_model(trace.nodes.values());
    ShapeReport {
        nodes: dag.len(),
        depth: dag.reasoning_depth(),
        speedup: latency.speedup(),
        latency,
        context: context_cost(&trace),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeRow {
    pub mode: Mode,
    pub n: usize,
    pub tokens_in: f64,
    pub tokens_out: f64,
    pub t_seq_ms: f64,
    pub t_plan_ms: f64,
    pub speedup: f64,
    pub context_total: f64,
}

/// Per-mode means over records.
pub fn records_table(records: &[RunRecord]) -> Vec<ModeRow> {
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.mode.to_string()).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&RunRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let t_seq = mean(&|r| r.timing.t_seq.as_secs_f64() * 1e3);
            let t_plan = mean(&|r| r.timing.t_plan.as_secs_f64() * 1e3);
            ModeRow {
                mode: rs[0].mode,
                n: rs.len(),
                tokens_in: mean(&|r| r.tokens.input as f64),
                tokens_out: mean(&|r| r.tokens.output as f64),
                t_seq_ms: t_seq,
                t_plan_ms: t_plan,
                speedup: if t_plan > 0.0 { t_seq / t_plan } else { 1.0 },
                context_total: mean(&|r| r.context.total as f64),
            }
        })
        .collect()
}

pub fn shape_text(r: &ShapeReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "nodes    {}", r.nodes);
    let _ = writeln!(s, "depth    {}", r.depth);
    let _ = writeln!(s, "t_seq    {:.3}", r.latency.t_seq.as_secs_f64());
    let _ = writeln!(s, "t_plan   {:.3}", r.latency.t_plan.as_secs_f64());
    let _ = writeln!(s, "speedup  {:.4}", r.speedup);
    let _ = writeln!(s, "\nnode   context_words");
    for (id, words) in &r.context.per_node {
        let _ = writeln!(s, "{:<6} {words}", id.to_string());
    }
    let _ = writeln!(s, "total  {}", r.context.total);
    s
}

pub fn rows_text(rows: &[ModeRow]) -> String {
    let mut s = String::from("mode          n     tokens_in  tokens_out  t_seq_ms  t_plan_ms  speedup  context\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<13} {:<5} {:<10.1} {:<11.1} {:<9.1} {:<10.1} {:<8.3} {:.1}",
            r.mode.to_string(),
            r.n,
            r.tokens_in,
            r.tokens_out,
            r.t_seq_ms,
            r.t_plan_ms,
            r.speedup,
            r.context_total
        );
    }
    s
}

pub async fn cmd_bench(args: &BenchArgs) -> Result<Outcome, CliError> {
    if let Some(path) = &args.records {
        let records: Vec<RunRecord> = read_jsonl(path).map_err(|e| CliError::usage(e.to_string()))?;
        let rows = records_table(&records);
        if args.json {
            println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
        } else {
            print!("{}", rows_text(&rows));
        }
        return Ok(Outcome::Success);
    }
    let spec = args.shape.as_deref().ok_or_else(|| CliError::usage("give a shape or --records"))?;
    let dag = parse_shape(spec)?;
    let report = bench_shape(&dag, args.gen_cost, args.ret_cost).await;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
    } else {
        print!("{}", shape_text(&report));
    }
    Ok(Outcome::Success)
}
