use std::collections::HashSet;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use planrag::backend::LlmBackend;
use planrag::eval::read_jsonl;
use planrag::executor::{Engine, PlanCache, RunConfig, RunRecord, RunStatus};
use planrag::retrieval::Retriever;
use serde::Deserialize;

use crate::records::{load_existing, RecordWriter};
use crate::{AppConfig, CliError, Outcome, RunArgs};

/// Backends and retriever for a run.
#[derive(Clone)]
pub struct Services {
    pub generator: Arc<dyn LlmBackend>,
    pub planner: Arc<dyn LlmBackend>,
    pub retriever: Arc<dyn Retriever>,
}

impl Services {
    pub fn from_args(args: &RunArgs, config: &AppConfig) -> Result<Self, CliError> {
        let generator = config.backend(&args.backend)?;
        let planner = match &args.planner {
            Some(spec) => config.backend(spec)?,
            None => generator.clone(),
        };
        let retriever = config.retriever(args.store.as_deref(), args.retriever_endpoint.as_deref())?;
        Ok(Self {
            generator,
            planner,
            retriever,
        })
    }
}

#[derive(Debug, Deserialize)]
struct RunItem {
    id: String,
    question: String,
}

pub struct RunSummary {
    /// Every record in the output file, resumed ones first.
    pub records: Vec<RunRecord>,
    pub written: usize,
    pub resumed: usize,
    pub outcome: Outcome,
}

pub fn run_config(args: &RunArgs, config: &AppConfig) -> Result<RunConfig, CliError> {
    let mode = match args.mode {
        Some(m) => m,
        None => config.default_mode()?,
    };
    let cfg = RunConfig {
        k: args.k.unwrap_or(config.k),
        max_parallel: args.max_parallel.unwrap_or(config.max_parallel),
        tag_resolution: args.tag_resolution,
        aggregation: args.aggregation,
        ..RunConfig::default().with_mode(mode)
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

pub async fn cmd_run(args: &RunArgs, config: &AppConfig, services: &Services) -> Result<RunSummary, CliError> {
    let cfg = run_config(args, config)?;
    let parallel = args.parallel.unwrap_or(config.parallel);
    if parallel == 0 {
        return Err(CliError::usage("--parallel must be at least 1"));
    }
    let items: Vec<RunItem> = read_jsonl(&args.dataset).map_err(|e| CliError::usage(e.to_string()))?;
    let mut ids = HashSet::new();
    for item in &items {
        if !ids.insert(item.id.as_str()) {
            return Err(CliError::usage(format!("duplicate item id {:?}", item.id)));
        }
    }

    let mut records = Vec::new();
    if args.resume {
        let (existing, warnings) = load_existing(&args.out)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        records = existing;
    }
    let done: HashSet<String> = records.iter().map(|r| r.id.clone()).collect();
    let resumed = records.len();
    let pending: Vec<&RunItem> = items.iter().filter(|i| !done.contains(&i.id)).collect();

    let mut engine = Engine::new(services.generator.clone(), services.retriever.clone())
        .with_planner(services.planner.clone());
    if !args.no_cache {
        let dir = args.cache_dir.clone().unwrap_or_else(|| config.cache_dir.clone());
        engine = engine.with_plan_cache(PlanCache::new(dir));
    }

    let mut writer = RecordWriter::create(&args.out, args.resume)?;
    let engine = &engine;
    let cfg = &cfg;
    let mut runs = stream::iter(pending)
        .map(|item| async move { engine.run_pipeline(&item.id, &item.question, cfg).await })
        .buffered(parallel);
    let mut written = 0;
    while let Some(record) = runs.next().await {
        writer.write(&record)?;
        if record.status != RunStatus::Complete {
            eprintln!("{}: {:?}", record.id, record.status);
        }
        records.push(record);
        written += 1;
    }
    let incomplete = records.iter().filter(|r| r.status != RunStatus::Complete).count();
    eprintln!(
        "{written} records written to {} ({resumed} resumed, {incomplete} incomplete)",
        args.out.display()
    );
    Ok(RunSummary {
        records,
        written,
        resumed,
        outcome: if incomplete == 0 {
            Outcome::Success
        } else {
            Outcome::Partial
        },
    })
}
