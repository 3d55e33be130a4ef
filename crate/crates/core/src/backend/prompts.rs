//! Prompt catalog.
//!
//! System prompts live as text assets under `prompts/` and are compiled in.
//! Bump [`CATALOG_VERSION`] whenever an asset changes; snapshot tests pin the
//! rendered bytes.

use crate::plan::NodeId;

use super::{PromptBundle, PromptPurpose};

pub const CATALOG_VERSION: u32 = 1;

pub const PLAN_SYSTEM: &str = include_str!("../../prompts/plan.txt");
pub const TAG_REPLACE_SYSTEM: &str = include_str!("../../prompts/tag_replace.txt");
pub const ANSWER_SYSTEM: &str = include_str!("../../prompts/answer.txt");
pub const VANILLA_LLM_SYSTEM: &str = include_str!("../../prompts/vanilla_llm.txt");
pub const VANILLA_RAG_SYSTEM: &str = include_str!("../../prompts/vanilla_rag.txt");
pub const COT_RAG_SYSTEM: &str = include_str!("../../prompts/cot_rag.txt");
pub const QD_SPLIT_SYSTEM: &str = include_str!("../../prompts/qd_split.txt");
pub const QD_ANSWER_SYSTEM: &str = include_str!("../../prompts/qd_answer.txt");
pub const IG_JUDGE_SYSTEM: &str = include_str!("../../prompts/ig_judge.txt");

/// Every system prompt keyed by purpose.
pub fn catalog() -> [(PromptPurpose, &'static str); 9] {
    [
        (PromptPurpose::Plan, PLAN_SYSTEM),
        (PromptPurpose::TagReplace, TAG_REPLACE_SYSTEM),
        (PromptPurpose::Answer, ANSWER_SYSTEM),
        (PromptPurpose::VanillaLlm, VANILLA_LLM_SYSTEM),
        (PromptPurpose::VanillaRag, VANILLA_RAG_SYSTEM),
        (PromptPurpose::Cot, COT_RAG_SYSTEM),
        (PromptPurpose::QdSplit, QD_SPLIT_SYSTEM),
        (PromptPurpose::QdAnswer, QD_ANSWER_SYSTEM),
        (PromptPurpose::IgJudge, IG_JUDGE_SYSTEM),
    ]
}

fn system(text: &str) -> String {
    text.trim_end().to_string()
}

/// A previously answered question shown to the model as context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnownAnswer {
    pub question: String,
    pub answer: String,
}

/// A parent node's materialized question and answer, for tag replacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentAnswer {
    pub id: NodeId,
    pub question: String,
    pub answer: String,
}

/// `[["doc one"], ["doc two"]]`, the retrieval list format used in the prompts.
pub fn render_retrievals<S: AsRef<str>>(docs: &[S]) -> String {
    let items: Vec<String> = docs
        .iter()
        .map(|d| format!("[{}]", serde_json::Value::String(d.as_ref().to_string())))
        .collect();
    format!("[{}]", items.join(", "))
}

fn render_known(known: &[KnownAnswer]) -> Option<String> {
    if known.is_empty() {
        return None;
    }
    let lines: Vec<String> = known
        .iter()
        .map(|k| format!("Q={} A={}", k.question, k.answer))
        .collect();
    Some(format!("Known answers: {}", lines.join("\n")))
}

fn query_block<S: AsRef<str>>(
    query: &str,
    retrievals: Option<&[S]>,
    known: &[KnownAnswer],
    trailer: &str,
) -> String {
    let mut lines = vec![format!("Query: {query}")];
    if let Some(docs) = retrievals {
        lines.push(format!("Retrievals: {}", render_retrievals(docs)));
    }
    lines.extend(render_known(known));
    if !trailer.is_empty() {
        lines.push(trailer.to_string());
    }
    lines.join("\n")
}

/// Plan-generation prompt; the user turn is the query itself.
pub fn plan_prompt(query: &str) -> PromptBundle {
    PromptBundle::new(PromptPurpose::Plan, system(PLAN_SYSTEM), query.trim())
}

pub fn tag_replace_prompt(node: NodeId, template: &str, parents: &[ParentAnswer]) -> PromptBundle {
    let mut lines = vec![format!("Query: {node}: {template}")];
    for p in parents {
        lines.push(format!("{}: {}", p.id, p.question));
        lines.push(format!("{}: {}", p.id.answer_label(), p.answer));
    }
    lines.push("Output:".to_string());
    PromptBundle::new(
        PromptPurpose::TagReplace,
        system(TAG_REPLACE_SYSTEM),
        lines.join("\n"),
    )
}

/// Strips the `Output:` and `QI.J:` prefixes a model echoes back.
pub fn clean_tag_replace_output(raw: &str, node: NodeId) -> String {
    let mut s = raw.trim();
    if let Some(rest) = s.strip_prefix("Output:") {
        s = rest.trim_start();
    }
    let label = format!("{node}:");
    if let Some(rest) = s.strip_prefix(&label) {
        s = rest.trim_start();
    }
    s.trim_matches('"').trim().to_string()
}

/// Answer-generation prompt for one plan node.
pub fn answer_prompt<S: AsRef<str>>(
    question: &str,
    retrievals: &[S],
    known: &[KnownAnswer],
) -> PromptBundle {
    PromptBundle::new(
        PromptPurpose::Answer,
        system(ANSWER_SYSTEM),
        query_block(question, Some(retrievals), known, "Generation:"),
    )
}

/// Inputs for the baseline pipelines.
#[derive(Debug, Clone, Copy)]
pub enum BaselinePrompt<'a, S: AsRef<str>> {
    VanillaLlm {
        query: &'a str,
    },
    VanillaRag {
        query: &'a str,
        retrievals: &'a [S],
    },
    Cot {
        query: &'a str,
        retrievals: &'a [S],
    },
    QdSplit {
        query: &'a str,
    },
    QdAnswer {
        query: &'a str,
        retrievals: &'a [S],
        known: &'a [KnownAnswer],
    },
}

pub fn baseline_prompt<S: AsRef<str>>(prompt: BaselinePrompt<'_, S>) -> PromptBundle {
    match prompt {
        BaselinePrompt::VanillaLlm { query } => PromptBundle::new(
            PromptPurpose::VanillaLlm,
            system(VANILLA_LLM_SYSTEM),
            format!("Query: {query}"),
        ),
        BaselinePrompt::VanillaRag { query, retrievals } => PromptBundle::new(
            PromptPurpose::VanillaRag,
            system(VANILLA_RAG_SYSTEM),
            query_block(query, Some(retrievals), &[], "Generation:"),
        ),
        BaselinePrompt::Cot { query, retrievals } => PromptBundle::new(
            PromptPurpose::Cot,
            system(COT_RAG_SYSTEM),
            query_block(query, Some(retrievals), &[], "Generation:"),
        ),
        BaselinePrompt::QdSplit { query } => PromptBundle::new(
            PromptPurpose::QdSplit,
            system(QD_SPLIT_SYSTEM),
            format!("Query: {query}\nSubqueries:"),
        ),
        BaselinePrompt::QdAnswer {
            query,
            retrievals,
            known,
        } => PromptBundle::new(
            PromptPurpose::QdAnswer,
            system(QD_ANSWER_SYSTEM),
            query_block(query, Some(retrievals), known, "Generation:"),
        ),
    }
}

/// Information-gain judge prompt for the subqueries up to some depth.
pub fn ig_judge_prompt(main_query: &str, subqueries: &[(NodeId, String)]) -> PromptBundle {
    let listed: Vec<String> = subqueries
        .iter()
        .map(|(id, t)| format!("{id}: {t}"))
        .collect();
    PromptBundle::new(
        PromptPurpose::IgJudge,
        system(IG_JUDGE_SYSTEM),
        format!(
            "Main Query: {main_query}\nSubqueries: [{}]\nInformation Gain:",
            listed.join(", ")
        ),
    )
}
