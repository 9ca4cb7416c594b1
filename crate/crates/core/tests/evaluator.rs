use std::collections::BTreeMap;
use std::sync::Arc;

use seedforge::eval::{
    accuracy, compare_benchmarks, compute_metrics, evaluate_variant, pooled_corpus, run_condition,
    semantic_retrieve, Condition, Retriever, RunOptions, SemanticIndex, VariantEvaluation,
};
use seedforge::gateway::{ChatRequest, Gateway, MockBackend, MockScript};
use seedforge::model::{BenchmarkMetrics, ConditionTag, Document, EvalRecord, Sample};
use seedforge::prompts::PromptLibrary;

fn field<'a>(prompt: &'a str, prefix: &str) -> &'a str {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(prefix))
        .unwrap_or("")
        .trim()
}

/// Five samples `q{i}` with answer `answer{i}`; the gold documents state the
/// answer except for `q4`, whose gold document is a distractor.
fn fixture() -> Vec<Sample> {
    (0..5)
        .map(|i| {
            let gold = if i == 4 {
                "nothing useful here".to_owned()
            } else {
                format!("The answer to q{i} is answer{i}.")
            };
            Sample::new(
                format!("q{i}"),
                format!("What is q{i}?"),
                format!("answer{i}"),
            )
            .with_contexts(vec![
                Document::new("g", format!("Gold {i}"), gold),
                Document::new(
                    "x",
                    format!("Other {i}"),
                    format!("Filler text number {i}."),
                ),
            ])
            .with_supporting(vec!["g".into()])
        })
        .collect()
}

/// Answers from documents when they state the answer, and knows `q0`
/// without context.
fn reader() -> Arc<MockBackend> {
    Arc::new(MockBackend::from_fn("reader", |req: &ChatRequest| {
        let user = &req.user_prompt;
        let q = field(user, "Question: ");
        let id = q.trim_start_matches("What is ").trim_end_matches('?');
        let tag = req.tag.as_deref().unwrap_or("");
        if tag.starts_with("no_context_probe") {
            return Some(if id == "q0" {
                "answer0".into()
            } else {
                "Unknown".into()
            });
        }
        let needle = format!("The answer to {id} is ");
        Some(match user.find(&needle) {
            Some(i) => user[i + needle.len()..]
                .split('.')
                .next()
                .unwrap()
                .to_owned(),
            None => "Unknown".into(),
        })
    }))
}

#[test]
fn gold_fixture_scores_point_eight() {
    let gw = Gateway::new("reader", reader());
    let prompts = PromptLibrary::builtin();
    let samples = fixture();
    let gold = run_condition(
        &samples,
        &Condition::gold(),
        None,
        &[],
        &gw,
        &prompts,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(accuracy(&gold).unwrap().0, 0.8);
    let none = run_condition(
        &samples,
        &Condition::no_context(),
        None,
        &[],
        &gw,
        &prompts,
        &RunOptions::default(),
    )
    .unwrap();
    let m = compute_metrics("fixture", "reader", &none, &gold).unwrap();
    assert_eq!(m.leakage_error, 0.2);
    assert!((m.answerability_accuracy - 0.6).abs() < 1e-12);
}

#[test]
fn retriever_condition_sends_top_k_documents() {
    let backend = reader();
    let gw = Gateway::new("reader", backend.clone());
    let prompts = PromptLibrary::builtin();
    let samples = fixture();
    let corpus = pooled_corpus(&samples);
    assert_eq!(corpus.len(), 10);
    assert_eq!(corpus[0].doc_id, "q0::g");
    let index = SemanticIndex::build("semantic", &corpus, gw.clone()).unwrap();
    let cond = Condition::retriever("semantic", 5).unwrap();
    let records = run_condition(
        &samples,
        &cond,
        Some(&index),
        &corpus,
        &gw,
        &prompts,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(records.len(), 5);
    assert!(records
        .iter()
        .all(|r| r.condition == ConditionTag::Retriever("semantic".into())));
    let qa: Vec<ChatRequest> = backend
        .requests()
        .into_iter()
        .filter(|r| r.tag.as_deref() == Some("qa_answer@v1"))
        .collect();
    assert_eq!(qa.len(), 5);
    for r in qa {
        let blocks = r
            .user_prompt
            .lines()
            .filter(|l| l.starts_with('[') && l.contains("] "))
            .count();
        assert_eq!(blocks, 5, "{}", r.user_prompt);
    }
}

#[test]
fn evaluate_variant_collects_every_condition() {
    let gw = Gateway::new("reader", reader());
    let prompts = PromptLibrary::builtin();
    let samples = fixture();
    let corpus = pooled_corpus(&samples);
    let index = SemanticIndex::build("semantic", &corpus, gw.clone()).unwrap();
    let refs: Vec<&dyn Retriever> = vec![&index];
    let run = evaluate_variant(
        &samples,
        "fixture",
        "orig",
        &gw,
        &refs,
        &corpus,
        3,
        &prompts,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(run.records.len(), 15);
    assert_eq!(run.evaluation.metrics.acc_gold, 0.8);
    assert!(run.evaluation.retriever_accuracy.contains_key("semantic"));
}

#[test]
fn rescaled_embeddings_rank_identically() {
    let table = |scale: f64| {
        BTreeMap::from([
            ("query".to_string(), vec![0.6 * scale, 0.8 * scale]),
            ("a".to_string(), vec![1.0 * scale, 0.0]),
            ("b".to_string(), vec![0.0, 2.0 * scale]),
            ("c".to_string(), vec![3.0 * scale, 4.0 * scale]),
        ])
    };
    let corpus = vec![
        Document::new("a", "", "a"),
        Document::new("b", "", "b"),
        Document::new("c", "", "c"),
    ];
    let run = |scale| {
        let gw = Gateway::new(
            "e",
            Arc::new(MockBackend::new("e", MockScript::default()).with_embeddings(table(scale))),
        );
        semantic_retrieve("query", &corpus, 3, &gw).unwrap()
    };
    let (x, y) = (run(1.0), run(37.5));
    assert_eq!(x.doc_ids(), ["c", "b", "a"]);
    assert_eq!(x.doc_ids(), y.doc_ids());
    for (p, q) in x.scores().iter().zip(y.scores()) {
        assert!((p - q).abs() < 1e-12);
    }
    assert!((x.scores()[1] - 0.8).abs() < 1e-12);
}

fn records(condition: ConditionTag, correct: &[bool]) -> Vec<EvalRecord> {
    correct
        .iter()
        .enumerate()
        .map(|(i, &c)| EvalRecord {
            sample_id: format!("s{i}"),
            condition: condition.clone(),
            model_response: String::new(),
            correct: c,
            quality_class: None,
            error: None,
        })
        .collect()
}

#[test]
fn metrics_ignore_record_order() {
    let no = records(
        ConditionTag::NoContext,
        &[true, false, false, true, false, false, false],
    );
    let gold = records(
        ConditionTag::Gold,
        &[true, true, false, true, true, false, true],
    );
    let m = compute_metrics("d", "m", &no, &gold).unwrap();
    let mut no_r = no.clone();
    no_r.reverse();
    let mut gold_r = gold.clone();
    gold_r.rotate_left(3);
    assert_eq!(compute_metrics("d", "m", &no_r, &gold_r).unwrap(), m);
}

#[test]
fn retriever_spread_of_orig_hotpotqa() {
    let eval = VariantEvaluation {
        variant: "orig".into(),
        metrics: BenchmarkMetrics::from_accuracies("hotpotqa", "gpt-5", 0.500, 0.838, 74),
        retriever_accuracy: BTreeMap::from([
            ("semantic".into(), 0.838),
            ("hipporag".into(), 0.865),
        ]),
    };
    let report = compare_benchmarks(&[eval], "orig", vec![]);
    assert!((report.rows[0].retriever_spread.unwrap() - 0.027).abs() < 1e-9);
}
