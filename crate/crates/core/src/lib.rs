//! Test-time reasoning plans for retrieval-augmented generation.
//!
//! A query is decomposed into a DAG of atomic subqueries, which is then
//! executed layer by layer: nodes at the same depth run concurrently, each
//! one sees only its own retrievals and its parents' answers.

pub mod backend;
pub mod eval;
pub mod executor;
pub mod parser;
pub mod plan;
pub mod retrieval;
mod serde_duration;

pub use parser::{parse_plan_text, ParseError, PlanOutcome, PlanParseResult};
pub use plan::{
    build_dag, AnswerTag, CanonicalPlan, NodeId, NodeLabel, PlanError, PlanNode, ReasoningDag,
};
