use std::fmt::Write as _;
use std::sync::Arc;

use planrag::eval::{read_jsonl, DepthHistogram};
use planrag::executor::{Engine, PlanCache, PlanSource, RunConfig};
use planrag::plan::CanonicalPlan;
use planrag::retrieval::ScriptedRetriever;
use serde::{Deserialize, Serialize};

use crate::{AppConfig, CliError, Outcome, PlanArgs};

/// One line of `plan` output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanLine {
    pub id: String,
    pub question: String,
    pub source: PlanSource,
    pub depth: usize,
    pub plan: CanonicalPlan,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Item {
    id: String,
    question: String,
}

pub fn histogram_table(h: &DepthHistogram) -> String {
    let mut s = String::from("depth  count  percent\n");
    for b in &h.buckets {
        let _ = writeln!(s, "{:<6} {:<6} {:.2}", b.label, b.count, 100.0 * b.fraction);
    }
    s
}

pub async fn cmd_plan(args: &PlanArgs, config: &AppConfig) -> Result<Outcome, CliError> {
    if let Some(path) = &args.plans {
        let lines: Vec<PlanLine> = read_jsonl(path).map_err(|e| CliError::usage(e.to_string()))?;
        print!("{}", histogram_table(&DepthHistogram::from_depths(lines.iter().map(|l| l.depth))));
        return Ok(Outcome::Success);
    }
    let items: Vec<Item> = match (&args.query, &args.dataset) {
        (Some(q), _) => vec![Item {
            id: "query".into(),
            question: q.clone(),
        }],
        (None, Some(path)) => read_jsonl(path).map_err(|e| CliError::usage(e.to_string()))?,
        (None, None) => return Err(CliError::usage("give --query, --dataset, or --plans")),
    };
    let planner = config.backend(&args.planner)?;
    let mut engine = Engine::new(planner, Arc::new(ScriptedRetriever::new()));
    if !args.no_cache {
        let dir = args.cache_dir.clone().unwrap_or_else(|| config.cache_dir.clone());
        engine = engine.with_plan_cache(PlanCache::new(dir));
    }
    let cfg = RunConfig::default();
    let mut lines = Vec::new();
    for item in &items {
        let planned = engine.plan_query(&item.question, &cfg).await;
        if planned.source == PlanSource::Fallback {
            eprintln!("{}: planner failed, using the query as a single step", item.id);
        }
        lines.push(PlanLine {
            id: item.id.clone(),
            question: item.question.clone(),
            source: planned.source,
            depth: planned.dag.reasoning_depth(),
            plan: planned.dag.to_canonical(),
            warnings: planned.warnings,
        });
    }

    let body = if args.query.is_some() {
        serde_json::to_string_pretty(&lines[0]).expect("plans serialize") + "\n"
    } else {
        lines
            .iter()
            .map(|l| serde_json::to_string(l).expect("plans serialize") + "\n")
            .collect()
    };
    match &args.out {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    if args.stats {
        let h = DepthHistogram::from_depths(lines.iter().map(|l| l.depth));
        eprint!("{}", histogram_table(&h));
    }
    Ok(if lines.iter().any(|l| l.source == PlanSource::Fallback) {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}
