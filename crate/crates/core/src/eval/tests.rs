use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::backend::{PromptPurpose, ScriptedBackend};
use crate::executor::{ContextAccounting, ContextReport, Mode, NodeResult, NodeStatus, Timing, TokenTotals, TraceNodes};
use crate::plan::NodeId;
use crate::retrieval::{Document, RetrievalSet};

fn doc(id: &str, text: &str) -> Document {
    Document {
        doc_id: id.into(),
        text: text.into(),
        source_id: id.split('#').next().unwrap().into(),
        score: 1.0,
    }
}

fn node(id: NodeId, template: &str, docs: Vec<Document>) -> NodeResult {
    let mut n = NodeResult::new(id, template, 5);
    n.retrievals = RetrievalSet {
        query: template.into(),
        k: 5,
        documents: docs,
    };
    n
}

fn record(id: &str, question: &str, answer: &str, depth: usize, nodes: Vec<NodeResult>) -> RunRecord {
    RunRecord {
        id: id.into(),
        mode: Mode::Plan,
        question: question.into(),
        plan: None,
        plan_source: None,
        depth,
        trace: TraceNodes { nodes },
        final_answer: answer.into(),
        tokens: TokenTotals { input: 100, output: 10 },
        timing: Timing::default(),
        context: ContextReport {
            accounting: ContextAccounting::ParentsOnly,
            per_node: BTreeMap::new(),
            total: 0,
            max: 0,
        },
        status: RunStatus::Complete,
        warnings: vec![],
    }
}

fn item(id: &str, answers: &[&str], gold: Option<&[&str]>) -> DatasetItem {
    DatasetItem {
        id: id.into(),
        question: format!("question {id}"),
        answers: answers.iter().map(|s| s.to_string()).collect(),
        gold_sentences: gold.map(|g| g.iter().map(|s| s.to_string()).collect()),
    }
}

fn nid(d: u32, p: u32) -> NodeId {
    NodeId::new(d, p).unwrap()
}

#[test]
fn normalization_and_containment() {
    assert_eq!(normalize_answer("  Hello,\n  World!! "), "hello, world");
    assert_eq!(normalize_answer("\"1967.\""), "1967");
    assert!(accuracy_contains("It was published in 1967.", &["1967".into()]));
    assert!(accuracy_contains("S. E.  Hinton", &["s. e. hinton".into()]));
    assert!(!accuracy_contains("1968", &["1967".into()]));
    assert!(!accuracy_contains("anything", &["  ".into()]));
    assert!(accuracy_contains("Yes", &["no".into(), "yes".into()]));
}

#[test]
fn histogram_buckets() {
    let h = DepthHistogram::from_depths([0, 1, 1, 2, 3, 4, 7, 9]);
    let counts: Vec<usize> = h.buckets.iter().map(|b| b.count).collect();
    assert_eq!(counts, vec![1, 2, 1, 1, 3]);
    assert_eq!(h.get(">=4").unwrap().fraction, 3.0 / 8.0);
    let total: f64 = h.buckets.iter().map(|b| b.fraction).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(DepthHistogram::from_depths([]).buckets.iter().all(|b| b.fraction == 0.0));
}

#[test]
fn pr_hand_computed() {
    let gold1 = "Rumble Fish is a novel by S. E. Hinton.";
    let gold2 = "The Outsiders was published in 1967 by Viking Press.";
    let hit = doc("rumble#000000", "Intro words. Rumble Fish is a novel by S.E. Hinton, first published in 1975.");
    let hit_spaced = doc("rumble#000001", "rumble fish is a novel by s. e. hinton");
    let miss = doc("other#000000", "Tulsa is a city in Oklahoma.");
    let nodes = vec![
        node(nid(1, 1), "a", vec![hit.clone(), miss.clone()]),
        node(nid(2, 1), "b", vec![hit.clone(), hit_spaced]),
    ];
    let rec = record("r", "q", "1967", 2, nodes);
    let items = [item("r", &["1967"], Some(&[gold1, gold2]))];
    let pr = retrieval_pr(&[rec], &items).unwrap();
    // "S.E." tokenizes to "se", so the first document does not contain the gold chunk
    // "s e hinton"; only the spaced copy does.
    assert_eq!((pr.hits, pr.retrieved, pr.covered, pr.gold), (1, 3, 1, 2));
    assert!((pr.precision - 1.0 / 3.0).abs() < 1e-12);
    assert!((pr.recall - 0.5).abs() < 1e-12);
}

#[test]
fn pr_long_gold_sentence_chunks() {
    let words: Vec<String> = (0..120).map(|i| format!("w{i}")).collect();
    let sentence = words.join(" ");
    assert_eq!(gold_chunks(&sentence).len(), 3);
    // A document holding only the last 20-word chunk covers the sentence.
    let tail = doc("d#000000", &words[100..].join(" "));
    let rec = record("r", "q", "", 1, vec![node(nid(1, 1), "a", vec![tail])]);
    let pr = retrieval_pr(&[rec], &[item("r", &["x"], Some(&[sentence.as_str()]))]).unwrap();
    assert_eq!((pr.hits, pr.covered), (1, 1));
}

#[test]
fn pr_requires_gold() {
    let rec = record("r", "q", "", 0, vec![]);
    assert!(matches!(
        retrieval_pr(&[rec], &[item("r", &["x"], None)]),
        Err(EvalError::MissingGold(_))
    ));
}

#[test]
fn report_joins_on_id() {
    let recs = vec![
        record("a", "q", "It is Paris.", 1, vec![]),
        record("b", "q", "London", 2, vec![]),
    ];
    let items = vec![item("a", &["paris"], None), item("b", &["berlin"], None)];
    let report = build_report(&recs, &items, ReportOptions { pr: true }).unwrap();
    assert_eq!(report.correct, 1);
    assert_eq!(report.accuracy, 0.5);
    assert_eq!(report.tokens, TokenMeans { input: 100.0, output: 10.0 });
    assert!(report.precision.is_none());
    assert_eq!(report.notes.len(), 1);
    assert!(report.to_table().contains("accuracy     0.5000 (1/2)"));

    let extra = vec![item("a", &["paris"], None)];
    match build_report(&recs, &extra, ReportOptions::default()) {
        Err(EvalError::IdMismatch { unknown, .. }) => assert_eq!(unknown, vec!["b".to_string()]),
        other => panic!("{other:?}"),
    }
    let dup = vec![recs[0].clone(), recs[0].clone()];
    assert!(matches!(
        build_report(&dup, &extra, ReportOptions::default()),
        Err(EvalError::IdMismatch { .. })
    ));
}

#[test]
fn dataset_loading_reports_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    std::fs::write(
        &path,
        "{\"id\":\"1\",\"question\":\"q\",\"answers\":[\"a\"]}\n\n{\"id\":\"2\",\"question\":\"q\"}\n",
    )
    .unwrap();
    match load_dataset(&path) {
        Err(EvalError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    std::fs::write(&path, "{\"id\":\"1\",\"question\":\"q\",\"answers\":[]}\n").unwrap();
    assert!(load_dataset(&path).is_err());
    std::fs::write(&path, "{\"id\":\"1\",\"question\":\"q\",\"answers\":[\"a\"],\"gold_sentences\":[\"s\"]}\n").unwrap();
    assert_eq!(load_dataset(&path).unwrap()[0].gold_sentences, Some(vec!["s".to_string()]));
}

const FINLAND: &str = "When was the current President of Finland born?";

fn finland_record() -> RunRecord {
    let mut root = node(NodeId::ROOT, FINLAND, vec![]);
    root.status = NodeStatus::Seeded;
    record(
        "fin",
        FINLAND,
        "1968",
        2,
        vec![
            root,
            node(nid(1, 1), "Who is the current President of Finland?", vec![]),
            node(nid(2, 1), "When was <A1.1> born?", vec![]),
        ],
    )
}

#[tokio::test]
async fn ig_curve_lists_templates_per_depth() {
    let judge = ScriptedBackend::new()
        .on_contains(
            PromptPurpose::IgJudge,
            "Subqueries: [Q1.1: Who is the current President of Finland?]",
            "5",
        )
        .on_contains(
            PromptPurpose::IgJudge,
            "Subqueries: [Q1.1: Who is the current President of Finland?, Q2.1: When was <A1.1> born?]",
            "Information Gain: 10",
        );
    let curve = info_gain_curve(&[finland_record()], &judge, IgOptions::default()).await;
    assert_eq!(curve.means(), vec![5.0, 10.0]);
    assert_eq!(curve.points.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
    assert!(curve.is_monotone());
    assert!(curve.warnings.is_empty());
    assert_eq!(curve.to_csv(), "depth,mean_ig,n\n1,5.0000,1\n2,10.0000,1\n");
}

#[tokio::test]
async fn ig_simple_query_and_unparseable() {
    let judge = ScriptedBackend::new()
        .on_contains(PromptPurpose::IgJudge, "Subqueries: [Q: What is 2+2?]", "7")
        .fallback(PromptPurpose::IgJudge, &["high"]);
    let simple = record("s", "What is 2+2?", "4", 0, vec![]);
    let curve = info_gain_curve(&[simple, finland_record()], &judge, IgOptions { parallel: 2 }).await;
    assert_eq!(curve.points.len(), 1);
    assert_eq!(curve.points[&0], IgPoint { mean: 7.0, count: 1 });
    assert_eq!(curve.warnings.len(), 2);
}

proptest! {
    #[test]
    fn more_gold_answers_never_lower_accuracy(
        pred in "[a-z ]{0,30}",
        golds in proptest::collection::vec("[a-z]{1,5}", 1..4),
        extra in "[a-z]{1,5}",
    ) {
        let before = accuracy_contains(&pred, &golds);
        let mut more = golds.clone();
        more.push(extra);
        prop_assert!(!before || accuracy_contains(&pred, &more));
    }

    #[test]
    fn pr_invariant_to_document_order(
        picks in proptest::collection::vec(0usize..6, 1..10),
        seed in any::<u64>(),
    ) {
        let corpus = [
            "alpha beta gamma", "delta epsilon", "zeta eta theta iota",
            "alpha beta", "kappa lambda", "mu nu xi",
        ];
        let docs: Vec<Document> = picks
            .iter()
            .map(|&i| doc(&format!("c#{i:06}"), corpus[i]))
            .collect();
        let mut shuffled = docs.clone();
        let n = shuffled.len();
        for i in 0..n {
            let j = (seed.rotate_left(i as u32) as usize) % n;
            shuffled.swap(i, j);
        }
        let items = [item("r", &["x"], Some(&["alpha beta", "kappa lambda", "omicron"]))];
        let a = retrieval_pr(&[record("r", "q", "", 1, vec![node(nid(1, 1), "a", docs)])], &items).unwrap();
        let b = retrieval_pr(&[record("r", "q", "", 1, vec![node(nid(1, 1), "a", shuffled)])], &items).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.precision <= 1.0 && a.recall <= 2.0 / 3.0 + 1e-12);
    }
}
