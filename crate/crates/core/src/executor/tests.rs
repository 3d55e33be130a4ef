use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;

use super::*;
use crate::backend::{PromptPurpose, ScriptedBackend};
use crate::plan::{build_dag, DagBuilder, NodeLabel};
use crate::retrieval::{word_count, ScriptedRetriever};

const RUMBLE: &str = "Rumble Fish was a novel by the author of the coming-of-age novel published in what year by Viking Press?";
const RUMBLE_PLAN: &str = r#"[("Q: Rumble Fish was a novel by the author of the coming-of-age novel published in what year by Viking Press?", "Q1.1: Who is the author of Rumble Fish?"), ("Q1.1: Who is the author of Rumble Fish?", "Q2.1: What is the coming-of-age novel by <A1.1>?"), ("Q2.1: What is the coming-of-age novel by <A1.1>?", "Q3.1: In what year was <A2.1> published by Viking Press?")]"#;
const CRICKET: &str = "What is the distance between the venues of the last two Men's Cricket World Cup finals?";

fn id(d: u32, p: u32) -> NodeId {
    NodeId::new(d, p).unwrap()
}

fn response(s: &str) -> String {
    format!("{{\"Response\": \"{s}\"}}")
}

fn rumble_backend() -> ScriptedBackend {
    ScriptedBackend::new()
        .on(PromptPurpose::Plan, RUMBLE, RUMBLE_PLAN)
        .on_contains(PromptPurpose::Answer, "Query: Who is the author of Rumble Fish?", &response("S. E. Hinton"))
        .on_contains(
            PromptPurpose::Answer,
            "Query: What is the coming-of-age novel by S. E. Hinton?",
            &response("The Outsiders"),
        )
        .on_contains(
            PromptPurpose::Answer,
            "Query: In what year was The Outsiders published by Viking Press?",
            &response("1967"),
        )
}

fn engine(
    backend: Arc<ScriptedBackend>,
    retriever: Arc<ScriptedRetriever>,
) -> Engine {
    Engine::new(backend, retriever)
}

fn cfg(mode: Mode) -> RunConfig {
    RunConfig::default().with_mode(mode)
}

fn cricket() -> ReasoningDag {
    let root = NodeLabel::new(NodeId::ROOT, CRICKET);
    let q11 = NodeLabel::new(id(1, 1), "Where was the last Men's Cricket World Cup final held?");
    let q12 = NodeLabel::new(id(1, 2), "Where was the second last Men's Cricket World Cup final held?");
    let q21 = NodeLabel::new(id(2, 1), "What are the coordinates of <A1.1>?");
    let q22 = NodeLabel::new(id(2, 2), "What are the coordinates of <A1.2>?");
    let q31 = NodeLabel::new(id(3, 1), "What is the distance between <A2.1> and <A2.2>?");
    build_dag(
        CRICKET,
        &[
            (root.clone(), q11.clone()),
            (root, q12.clone()),
            (q11, q21.clone()),
            (q12, q22.clone()),
            (q21, q31.clone()),
            (q22, q31),
        ],
    )
    .unwrap()
}

#[tokio::test]
async fn golden_rumble_fish_trace() {
    let backend = Arc::new(rumble_backend());
    let retriever = Arc::new(ScriptedRetriever::new().fallback(&["doc a", "doc b"]));
    let record = engine(backend.clone(), retriever.clone())
        .run_pipeline("rumble", RUMBLE, &cfg(Mode::PlanSubq))
        .await;
    assert_eq!(record.final_answer, "1967");
    assert_eq!(record.status, RunStatus::Complete);
    assert_eq!(record.depth, 3);
    let answered: Vec<(String, String)> = record
        .trace
        .nodes
        .iter()
        .filter(|n| n.is_answered())
        .map(|n| (n.materialized_question.clone(), n.answer.clone()))
        .collect();
    assert_eq!(
        answered,
        [
            ("Who is the author of Rumble Fish?".to_string(), "S. E. Hinton".to_string()),
            ("What is the coming-of-age novel by S. E. Hinton?".into(), "The Outsiders".into()),
            ("In what year was The Outsiders published by Viking Press?".into(), "1967".into()),
        ]
    );
    let queries: Vec<String> = retriever.calls().into_iter().map(|c| c.query).collect();
    assert_eq!(queries.len(), 3);
    assert_eq!(queries[2], "In what year was The Outsiders published by Viking Press?");
    let purposes: Vec<PromptPurpose> = backend.calls().iter().map(|c| c.purpose).collect();
    assert_eq!(
        purposes,
        [PromptPurpose::Plan, PromptPurpose::Answer, PromptPurpose::Answer, PromptPurpose::Answer]
    );
}

#[tokio::test]
async fn simple_dag_single_answer_call_with_retrieval() {
    let backend = Arc::new(ScriptedBackend::new().fallback(PromptPurpose::Answer, &[&response("Paris")]));
    let retriever = Arc::new(ScriptedRetriever::new().fallback(&["Paris is the capital of France."]));
    let trace = engine(backend.clone(), retriever.clone())
        .run_plan(&ReasoningDag::simple("What is the capital of France?"), &cfg(Mode::Plan))
        .await;
    assert_eq!(trace.final_answer.as_deref(), Some("Paris"));
    assert_eq!(backend.calls().len(), 1);
    assert_eq!(retriever.calls().len(), 1);
    assert_eq!(retriever.calls()[0].query, "What is the capital of France?");
    assert!(backend.calls()[0].user.contains("Paris is the capital of France."));
}

#[tokio::test]
async fn plan_mode_shares_one_retrieval() {
    let backend = Arc::new(rumble_backend());
    let retriever = Arc::new(ScriptedRetriever::new().on(RUMBLE, &["shared doc"]));
    let record = engine(backend.clone(), retriever.clone())
        .run_pipeline("r", RUMBLE, &cfg(Mode::Plan))
        .await;
    assert_eq!(record.final_answer, "1967");
    assert_eq!(retriever.calls().len(), 1);
    for n in &record.trace.nodes {
        assert_eq!(n.retrievals.texts(), ["shared doc"]);
    }
    let root = &record.trace.nodes[0];
    assert_eq!(root.status, NodeStatus::Seeded);
}

#[tokio::test]
async fn cricket_layers_overlap() {
    let d = Duration::from_millis(40);
    let backend = Arc::new(
        ScriptedBackend::new()
            .fallback(PromptPurpose::Answer, &[&response("x")])
            .with_delay(d),
    );
    let retriever = Arc::new(ScriptedRetriever::new());
    let trace = engine(backend.clone(), retriever)
        .run_plan(&cricket(), &cfg(Mode::PlanSubq))
        .await;
    assert_eq!(trace.status, RunStatus::Complete);
    let n = |d, p| &trace.nodes[&id(d, p)];
    for (a, b) in [(n(1, 1), n(1, 2)), (n(2, 1), n(2, 2))] {
        assert!(a.started < b.finished && b.started < a.finished, "intervals overlap");
    }
    assert!(trace.wall_time >= 3 * d);
    assert!(trace.wall_time < 4 * d, "{:?}", trace.wall_time);
    let lat = latency_model(trace.nodes.values());
    assert!(lat.t_seq >= 5 * d && lat.t_plan >= 3 * d && lat.t_plan < lat.t_seq);
}

#[tokio::test]
async fn max_parallel_one_serializes_layers() {
    let d = Duration::from_millis(20);
    let backend = Arc::new(
        ScriptedBackend::new()
            .fallback(PromptPurpose::Answer, &[&response("x")])
            .with_delay(d),
    );
    let mut c = cfg(Mode::PlanSubq);
    c.max_parallel = 1;
    let trace = engine(backend, Arc::new(ScriptedRetriever::new()))
        .run_plan(&cricket(), &c)
        .await;
    assert!(trace.wall_time >= 5 * d);
    let (a, b) = (&trace.nodes[&id(1, 1)], &trace.nodes[&id(1, 2)]);
    assert!(a.finished <= b.started || b.finished <= a.started);
}

#[tokio::test]
async fn context_holds_parents_only() {
    let backend = Arc::new(
        ScriptedBackend::new()
            .on_contains(PromptPurpose::Answer, "Query: Where was the last", &response("SENT11"))
            .on_contains(PromptPurpose::Answer, "Query: Where was the second last", &response("SENT12"))
            .on_contains(PromptPurpose::Answer, "Query: What are the coordinates of SENT11", &response("SENT21"))
            .on_contains(PromptPurpose::Answer, "Query: What are the coordinates of SENT12", &response("SENT22"))
            .on_contains(PromptPurpose::Answer, "Query: What is the distance", &response("SENT31")),
    );
    let trace = engine(backend.clone(), Arc::new(ScriptedRetriever::new()))
        .run_plan(&cricket(), &cfg(Mode::PlanSubq))
        .await;
    assert_eq!(trace.final_answer.as_deref(), Some("SENT31"));
    let calls = backend.calls();
    let last = calls
        .iter()
        .find(|c| c.user.starts_with("Query: What is the distance between SENT21 and SENT22?"))
        .expect("sink prompt");
    assert!(last.user.contains("A=SENT21") && last.user.contains("A=SENT22"));
    // Parent questions embed grandparent answers via their tags; the grandparents'
    // own question/answer pairs must not appear.
    assert!(!last.user.contains("A=SENT11") && !last.user.contains("A=SENT12"));
    assert!(!last.user.contains("Where was"));
    let q21 = calls
        .iter()
        .find(|c| c.user.starts_with("Query: What are the coordinates of SENT11"))
        .unwrap();
    assert!(q21.user.contains("A=SENT11"));
    assert!(!q21.user.contains("SENT12"), "no sibling-branch answers");
}

#[tokio::test]
async fn failure_aborts_only_descendants() {
    let backend = Arc::new(
        ScriptedBackend::new()
            .on_contains(PromptPurpose::Answer, "Query: Where was the second last", &response("Ahmedabad"))
            .on_contains(PromptPurpose::Answer, "Query: What are the coordinates of Ahmedabad", &response("23N")),
    );
    let trace = engine(backend, Arc::new(ScriptedRetriever::new()))
        .run_plan(&cricket(), &cfg(Mode::PlanSubq))
        .await;
    assert_eq!(trace.status, RunStatus::Partial);
    assert_eq!(trace.final_answer, None);
    assert!(matches!(trace.nodes[&id(1, 1)].status, NodeStatus::Failed { .. }));
    assert_eq!(
        trace.nodes[&id(2, 1)].status,
        NodeStatus::Skipped { failed_ancestor: id(1, 1) }
    );
    assert_eq!(trace.nodes[&id(2, 2)].answer, "23N");
    assert_eq!(
        trace.nodes[&id(3, 1)].status,
        NodeStatus::Skipped { failed_ancestor: id(1, 1) }
    );
}

#[tokio::test]
async fn materialize_deterministic_and_missing() {
    let eng = engine(Arc::new(ScriptedBackend::new()), Arc::new(ScriptedRetriever::new()));
    let dag = build_dag(
        "q",
        &[
            (NodeLabel::new(NodeId::ROOT, "q"), NodeLabel::new(id(1, 1), "a")),
            (NodeLabel::new(NodeId::ROOT, "q"), NodeLabel::new(id(1, 2), "b")),
            (NodeLabel::new(id(1, 1), "a"), NodeLabel::new(id(2, 1), "Compare <A1.1> and <A1.2>")),
            (NodeLabel::new(id(1, 2), "b"), NodeLabel::new(id(2, 1), "Compare <A1.1> and <A1.2>")),
        ],
    )
    .unwrap();
    let node = dag.node(id(2, 1)).unwrap();
    let mut p1 = NodeResult::new(id(1, 1), "a", 5);
    p1.answer = "Mount Everest".into();
    let mut p2 = NodeResult::new(id(1, 2), "b", 5);
    p2.answer = "K2".into();
    let c = cfg(Mode::PlanSubq);
    let mut r = NodeResult::new(id(2, 1), "", 5);
    let q = eng.materialize_subquery(node, &[&p1, &p2], &c, &mut r).await.unwrap();
    assert_eq!(q, "Compare Mount Everest and K2");
    let err = eng.materialize_subquery(node, &[&p1], &c, &mut r).await.unwrap_err();
    assert!(matches!(err, ExecError::MissingParentAnswer(t) if t.target == id(1, 2)));

    let answers = BTreeMap::from([(id(1, 1), "Mount Everest".to_string())]);
    assert_eq!(substitute_tags("How tall is <A1.1>?", &answers).unwrap(), "How tall is Mount Everest?");
}

#[tokio::test]
async fn llm_tag_resolution_with_fallback() {
    let template = "Who was the president of India when the captain of the Indian cricket team was <A1.1> and vice-captain was <A1.2> in 2018?";
    let expected = "Who was the president of India when the captain of the Indian cricket team was M.S.Dhoni and vice-captain was Virat Kohli?";
    let dag = {
        let mut b = DagBuilder::new("q");
        b.node(id(1, 1), "Who was the captain of India cricket team in 2018?").unwrap();
        b.node(id(1, 2), "Who was the vice-captain of India cricket team in 2018?").unwrap();
        b.node(id(2, 1), template).unwrap();
        b.edge(NodeId::ROOT, id(1, 1)).edge(NodeId::ROOT, id(1, 2));
        b.edge(id(1, 1), id(2, 1)).edge(id(1, 2), id(2, 1));
        b.build().unwrap().0
    };
    let mut p1 = NodeResult::new(id(1, 1), "", 5);
    p1.materialized_question = "Who was the captain of India cricket team in 2018?".into();
    p1.answer = "The captain of Indian cricket team in 2018 was M.S.Dhoni.".into();
    let mut p2 = NodeResult::new(id(1, 2), "", 5);
    p2.materialized_question = "Who was the vice-captain of India cricket team in 2018?".into();
    p2.answer = "The vice-captain of Indian cricket team in 2018 was Virat Kohli.".into();
    let mut c = cfg(Mode::PlanSubq);
    c.tag_resolution = TagResolution::Llm;

    let backend = Arc::new(
        ScriptedBackend::new().fallback(PromptPurpose::TagReplace, &[&format!("Output: Q2.1: {expected}")]),
    );
    let eng = engine(backend.clone(), Arc::new(ScriptedRetriever::new()));
    let mut r = NodeResult::new(id(2, 1), "", 5);
    let q = eng
        .materialize_subquery(dag.node(id(2, 1)).unwrap(), &[&p1, &p2], &c, &mut r)
        .await
        .unwrap();
    assert_eq!(q, expected);
    let user = &backend.calls()[0].user;
    assert!(user.starts_with("Query: Q2.1: Who was the president"));
    assert!(user.contains("A1.2: The vice-captain of Indian cricket team in 2018 was Virat Kohli."));

    let still_tagged = Arc::new(
        ScriptedBackend::new().fallback(PromptPurpose::TagReplace, &["Who was it when <A1.1> led?"]),
    );
    let eng = engine(still_tagged, Arc::new(ScriptedRetriever::new()));
    let mut r = NodeResult::new(id(2, 1), "", 5);
    let q = eng
        .materialize_subquery(dag.node(id(2, 1)).unwrap(), &[&p1, &p2], &c, &mut r)
        .await
        .unwrap();
    assert!(q.contains("was The captain of Indian cricket team in 2018 was M.S.Dhoni. and"));
    assert_eq!(r.warnings.len(), 1);
}

#[tokio::test]
async fn baseline_modes() {
    let backend = Arc::new(
        ScriptedBackend::new()
            .fallback(PromptPurpose::VanillaRag, &[r#"{"Response":"Paris"}"#])
            .fallback(PromptPurpose::VanillaLlm, &["Paris, obviously"])
            .fallback(
                PromptPurpose::Cot,
                &[r#"{"Reasoning_steps":["India performed its first nuclear test in 1974", "Indira Gandhi was the PM of India in 1974."],"Response":"Indira Gandhi"}"#],
            )
            .on(
                PromptPurpose::QdSplit,
                "Query: What is the capital of France?\nSubqueries:",
                "['What is the capital of France?']",
            )
            .fallback(PromptPurpose::QdAnswer, &[&response("Paris")]),
    );
    let retriever = Arc::new(ScriptedRetriever::new().fallback(&["Paris is the capital and most populous city of France."]));
    let eng = engine(backend.clone(), retriever.clone());
    let q = "What is the capital of France?";

    let rag = eng.run_pipeline("1", q, &cfg(Mode::VanillaRag)).await;
    assert_eq!(rag.final_answer, "Paris");
    assert_eq!(rag.depth, 0);

    let llm = eng.run_pipeline("2", q, &cfg(Mode::VanillaLlm)).await;
    assert_eq!(llm.final_answer, "Paris, obviously");
    assert!(llm.trace.nodes[0].retrievals.is_empty());
    assert!(!llm.warnings.is_empty());

    let cot = eng.run_pipeline("3", q, &cfg(Mode::CotRag)).await;
    assert_eq!(cot.final_answer, "Indira Gandhi");
    assert_eq!(cot.trace.nodes[0].reasoning_steps.len(), 2);

    let qd = eng.run_pipeline("4", q, &cfg(Mode::QdRag)).await;
    assert_eq!(qd.final_answer, "Paris");
    assert_eq!(qd.depth, 1);
    assert_eq!(qd.trace.nodes.len(), 2);
    assert_eq!(qd.context.accounting, ContextAccounting::Cumulative);
}

#[tokio::test]
async fn qd_carries_known_answers() {
    let backend = Arc::new(
        ScriptedBackend::new()
            .fallback(PromptPurpose::QdSplit, &["['first q?', 'second q?', 'third q?']"])
            .on_contains(PromptPurpose::QdAnswer, "Query: first q?", &response("one"))
            .on_contains(PromptPurpose::QdAnswer, "Query: second q?", &response("two"))
            .on_contains(PromptPurpose::QdAnswer, "Query: third q?", &response("three")),
    );
    let retriever = Arc::new(ScriptedRetriever::new().fallback(&["d"]));
    let rec = engine(backend.clone(), retriever.clone())
        .run_pipeline("x", "complex?", &cfg(Mode::QdRagSubq))
        .await;
    assert_eq!(rec.final_answer, "three");
    assert_eq!(retriever.calls().len(), 3);
    let last = backend.calls().into_iter().last().unwrap();
    assert!(last.user.contains("Known answers: Q=first q? A=one\nQ=second q? A=two"));
}

#[tokio::test]
async fn plan_retry_then_fallback() {
    let backend = Arc::new(
        ScriptedBackend::new()
            .on_seq(PromptPurpose::Plan, "hard question?", &["not a plan", "[(\"Q: hard question?\", \"Q1.1: easy part?\")]"])
            .fallback(PromptPurpose::Answer, &[&response("ok")]),
    );
    let eng = engine(backend.clone(), Arc::new(ScriptedRetriever::new()));
    let planned = eng.plan_query("hard question?", &cfg(Mode::PlanSubq)).await;
    assert_eq!(planned.source, PlanSource::Generated);
    assert_eq!(planned.dag.len(), 2);

    let broken = Arc::new(
        ScriptedBackend::new()
            .fallback(PromptPurpose::Plan, &["[(\"Q: a\", \"Q1.1: b\"), (\"Q1.1: b\", \"Q1.1: b\")]"])
            .fallback(PromptPurpose::Answer, &[&response("direct")]),
    );
    let eng = engine(broken.clone(), Arc::new(ScriptedRetriever::new()));
    let rec = eng.run_pipeline("b", "a", &cfg(Mode::PlanSubq)).await;
    assert_eq!(rec.plan_source, Some(PlanSource::Fallback));
    assert_eq!(rec.final_answer, "direct");
    assert_eq!(rec.depth, 0);
    let plan_calls = broken.calls().iter().filter(|c| c.purpose == PromptPurpose::Plan).count();
    assert_eq!(plan_calls, 2);
}

#[tokio::test]
async fn plan_cache_skips_planner() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(rumble_backend());
    let eng = engine(backend.clone(), Arc::new(ScriptedRetriever::new()))
        .with_plan_cache(PlanCache::new(dir.path()));
    let first = eng.run_pipeline("r", RUMBLE, &cfg(Mode::PlanSubq)).await;
    let second = eng.run_pipeline("r", RUMBLE, &cfg(Mode::PlanSubq)).await;
    assert_eq!(first.plan_source, Some(PlanSource::Generated));
    assert_eq!(second.plan_source, Some(PlanSource::Cached));
    assert_eq!(first.plan, second.plan);
    let plan_calls = backend.calls().iter().filter(|c| c.purpose == PromptPurpose::Plan).count();
    assert_eq!(plan_calls, 1);
}

#[tokio::test]
async fn records_are_deterministic_modulo_timing() {
    let run = || async {
        let eng = engine(
            Arc::new(rumble_backend().with_delay(Duration::from_millis(1))),
            Arc::new(ScriptedRetriever::new().fallback(&["a", "b", "c"])),
        );
        eng.run_pipeline("r", RUMBLE, &cfg(Mode::PlanSubq)).await
    };
    let (a, b) = (run().await, run().await);
    assert_eq!(a.normalized().to_json_line(), b.normalized().to_json_line());
    let parsed: RunRecord = serde_json::from_str(&a.to_json_line()).unwrap();
    assert_eq!(parsed.normalized(), a.normalized());
}

#[tokio::test]
async fn cancellation_stops_at_layer_boundary() {
    let c = cfg(Mode::PlanSubq);
    c.cancel.cancel();
    let backend = Arc::new(ScriptedBackend::new().fallback(PromptPurpose::Answer, &[&response("x")]));
    let trace = engine(backend.clone(), Arc::new(ScriptedRetriever::new()))
        .run_plan(&cricket(), &c)
        .await;
    assert_eq!(trace.status, RunStatus::Cancelled);
    assert!(backend.calls().is_empty());
}

#[tokio::test]
async fn invalid_config_yields_failed_record() {
    let mut c = cfg(Mode::VanillaRag);
    c.k = 0;
    let eng = engine(Arc::new(ScriptedBackend::new()), Arc::new(ScriptedRetriever::new()));
    let rec = eng.run_pipeline("x", "q", &c).await;
    assert_eq!(rec.status, RunStatus::Failed);
}

fn unit_node(node: NodeId, gen_ms: u64) -> NodeResult {
    let mut r = NodeResult::new(node, "", 5);
    r.gen_time = Duration::from_millis(gen_ms);
    r
}

#[test]
fn latency_model_shapes() {
    let chain: Vec<NodeResult> = (1..=3).map(|d| unit_node(id(d, 1), 1)).collect();
    let lat = latency_model(&chain);
    assert_eq!((lat.t_seq, lat.t_plan), (Duration::from_millis(3), Duration::from_millis(3)));

    let cricket: Vec<NodeResult> = [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1)]
        .into_iter()
        .map(|(d, p)| unit_node(id(d, p), 1))
        .collect();
    let lat = latency_model(&cricket);
    assert_eq!((lat.t_seq, lat.t_plan), (Duration::from_millis(5), Duration::from_millis(3)));
    assert!((lat.speedup() - 5.0 / 3.0).abs() < 1e-12);
}

fn answered(node: NodeId, q: &str, a: &str, docs: &[&str]) -> NodeResult {
    let mut r = NodeResult::new(node, q, 5);
    r.materialized_question = q.into();
    r.answer = a.into();
    r.retrievals.documents = docs
        .iter()
        .enumerate()
        .map(|(i, t)| crate::retrieval::Document {
            doc_id: format!("d#{i}"),
            text: t.to_string(),
            source_id: "d".into(),
            score: 1.0,
        })
        .collect();
    r
}

#[test]
fn context_cost_root_only_and_cricket_sink() {
    let dag = ReasoningDag::simple("one two three");
    let trace = ExecutionTrace {
        nodes: BTreeMap::from([(NodeId::ROOT, answered(NodeId::ROOT, "one two three", "x", &["a b", "c"]))]),
        dag,
        mode: Mode::Plan,
        final_answer: None,
        wall_time: Duration::ZERO,
        status: RunStatus::Complete,
        warnings: vec![],
    };
    assert_eq!(context_cost(&trace).per_node[&NodeId::ROOT], 3 + 3);

    let dag = cricket();
    let mut nodes = BTreeMap::new();
    let mut root = answered(NodeId::ROOT, CRICKET, "", &[]);
    root.status = NodeStatus::Seeded;
    nodes.insert(NodeId::ROOT, root);
    for (d, p) in [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1)] {
        nodes.insert(id(d, p), answered(id(d, p), &format!("question {d} {p}"), &format!("answer{d}{p} words"), &["doc"]));
    }
    let trace = ExecutionTrace {
        dag,
        mode: Mode::PlanSubq,
        nodes,
        final_answer: None,
        wall_time: Duration::ZERO,
        status: RunStatus::Complete,
        warnings: vec![],
    };
    let report = context_cost(&trace);
    assert_eq!(report.per_node[&id(3, 1)], 3 + 1 + 2 * (3 + 2));
    assert_eq!(report.per_node[&id(1, 1)], 3 + 1);
    assert!(!report.per_node.contains_key(&NodeId::ROOT));
}

/// Layered random dag with a single sink; every node in layer i > 1 has at
/// least one parent in layer i - 1.
fn layered_dag(widths: &[usize], picks: &[u64]) -> ReasoningDag {
    let mut b = DagBuilder::new("random root");
    let mut prev: Vec<NodeId> = vec![NodeId::ROOT];
    let mut all: Vec<NodeId> = Vec::new();
    let mut has_child = std::collections::BTreeSet::new();
    let mut pick = picks.iter().cycle();
    for (layer, &w) in widths.iter().enumerate() {
        let depth = layer as u32 + 1;
        let mut cur = Vec::new();
        for p in 1..=w as u32 {
            let nid = id(depth, p);
            b.node(nid, &format!("q{depth}.{p}")).unwrap();
            let bits = *pick.next().unwrap();
            let mut any = false;
            for (i, &parent) in prev.iter().enumerate() {
                if bits >> i & 1 == 1 {
                    b.edge(parent, nid);
                    has_child.insert(parent);
                    any = true;
                }
            }
            if !any {
                let parent = prev[(bits as usize) % prev.len()];
                b.edge(parent, nid);
                has_child.insert(parent);
            }
            cur.push(nid);
        }
        all.extend(cur.iter().copied());
        prev = cur;
    }
    let sink = id(widths.len() as u32 + 1, 1);
    b.node(sink, "final").unwrap();
    for n in all {
        if !has_child.contains(&n) {
            b.edge(n, sink);
        }
    }
    b.build().unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn parents_finish_before_children_start(
        widths in proptest::collection::vec(1usize..4, 1..4),
        picks in proptest::collection::vec(any::<u64>(), 1..8),
        max_parallel in 1usize..5,
    ) {
        let dag = layered_dag(&widths, &picks);
        let rt = tokio::runtime::Builder::new_current_thread().enable_time().build().unwrap();
        let trace = rt.block_on(async {
            let backend = Arc::new(
                ScriptedBackend::new()
                    .fallback(PromptPurpose::Answer, &[&response("a")])
                    .with_delay(Duration::from_millis(1)),
            );
            let mut c = cfg(Mode::PlanSubq);
            c.max_parallel = max_parallel;
            engine(backend, Arc::new(ScriptedRetriever::new())).run_plan(&dag, &c).await
        });
        prop_assert_eq!(trace.status, RunStatus::Complete);
        for (p, c) in dag.edges() {
            prop_assert!(trace.nodes[&p].finished <= trace.nodes[&c].started);
        }
        let lat = latency_model(trace.nodes.values());
        prop_assert!(lat.t_plan <= lat.t_seq);
        prop_assert_eq!(trace.nodes.len(), dag.len());
    }
}

#[test]
fn mode_names() {
    for m in Mode::ALL {
        assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<Mode>(&json).unwrap(), m);
    }
    assert_eq!("plan-subq".parse::<Mode>().unwrap(), Mode::PlanSubq);
    assert!("magic".parse::<Mode>().is_err());
    assert_eq!("LLM".parse::<TagResolution>().unwrap(), TagResolution::Llm);
    assert_eq!("boolean_normalize".parse::<Aggregation>().unwrap(), Aggregation::BooleanNormalize);
}

#[test]
fn chain_context_constant_vs_cumulative() {
    let q = "alpha beta";
    let build = |n: u32, mode: Mode| {
        let mut b = DagBuilder::new(q);
        let mut prev = NodeId::ROOT;
        for d in 1..=n {
            b.node(id(d, 1), "w1 w2 w3").unwrap();
            b.edge(prev, id(d, 1));
            prev = id(d, 1);
        }
        let dag = b.build().unwrap().0;
        let mut nodes = BTreeMap::new();
        let mut root = answered(NodeId::ROOT, q, "", &[]);
        root.status = NodeStatus::Seeded;
        nodes.insert(NodeId::ROOT, root);
        for d in 1..=n {
            nodes.insert(id(d, 1), answered(id(d, 1), "w1 w2 w3", "g", &["d1 d2", "d3 d4 d5"]));
        }
        context_cost(&ExecutionTrace {
            dag,
            mode,
            nodes,
            final_answer: None,
            wall_time: Duration::ZERO,
            status: RunStatus::Complete,
            warnings: vec![],
        })
    };
    for n in [2u32, 4, 8, 16] {
        let plan = build(n, Mode::PlanSubq);
        for d in 2..=n {
            assert_eq!(plan.per_node[&id(d, 1)], 3 + 5 + (3 + 1));
        }
        let qd = build(n, Mode::QdRag);
        for t in 1..=n {
            assert_eq!(qd.per_node[&id(t, 1)], word_count(q) + t as usize * (3 + 1 + 5));
        }
    }
}
