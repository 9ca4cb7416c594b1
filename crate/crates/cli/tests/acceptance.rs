//! Acceptance checks, one line per criterion. Runs offline against the
//! fixture world and recorded cassettes; exits non-zero if any check fails.

#[path = "../../core/tests/support/graphs.rs"]
mod graphs;
#[path = "../../core/tests/support/substitution.rs"]
mod substitution;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde_json::Value;

use seedforge::eval::{compare_benchmarks, compute_metrics, semantic_retrieve, VariantEvaluation};
use seedforge::gateway::{Backend, Cassette, CassetteBackend, Gateway, MockBackend, MockScript};
use seedforge::graph::{
    build_context_graph, cyclic_perturbation, graph_stats, structurally_equivalent, EquivalenceMode,
};
use seedforge::model::{
    BenchmarkMetrics, ConditionTag, Document, Entity, EntityMapping, EvalRecord, MappingPair,
    Triplet,
};
use seedforge::orchestrate::{
    generate_benchmark, read_outcomes, Gateways, GenerationConfig, RunOptions, OUTCOMES_FILE,
    PROBE_AUDIT_FILE,
};
use seedforge::prompts::PromptLibrary;
use seedforge::testkit::{World, WorldConfig};

const METRIC_TOL: f64 = 1e-9;
const SCORE_TOL: f64 = 1e-9;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config::with_cases(cases),
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn draw<S: Strategy>(runner: &mut TestRunner, strategy: &S) -> S::Value {
    strategy
        .new_tree(runner)
        .expect("strategy generates a value")
        .current()
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn records(tag: ConditionTag, n: usize, correct: usize) -> Vec<EvalRecord> {
    (0..n)
        .map(|i| EvalRecord {
            sample_id: format!("s{i}"),
            condition: tag.clone(),
            model_response: String::new(),
            correct: i < correct,
            quality_class: None,
            error: None,
        })
        .collect()
}

fn metric_arithmetic() -> Check {
    let start = Instant::now();
    let rows = [
        ("hotpotqa-orig", 500, 838, 0.500, 0.838, 0.338),
        ("hotpotqa-generated", 14, 432, 0.014, 0.432, 0.418),
        ("wikihop", 629, 829, 0.629, 0.829, 0.200),
        ("qasc", 750, 930, 0.750, 0.930, 0.180),
    ];
    for (name, no, gold, want_le, want_gold, want_aa) in rows {
        let m = compute_metrics(
            name,
            "fixture",
            &records(ConditionTag::NoContext, 1000, no),
            &records(ConditionTag::Gold, 1000, gold),
        )
        .map_err(|e| e.to_string())?;
        for (label, got, want) in [
            ("leakage", m.leakage_error, want_le),
            ("gold", m.acc_gold, want_gold),
            ("answerability", m.answerability_accuracy, want_aa),
        ] {
            if (got - want).abs() > METRIC_TOL {
                return Err(format!("{name} {label}: {got} != {want}"));
            }
        }
    }
    let eval = VariantEvaluation {
        variant: "orig".into(),
        metrics: BenchmarkMetrics::from_accuracies("hotpotqa", "fixture", 0.500, 0.838, 1000),
        retriever_accuracy: BTreeMap::from([("semantic".into(), 0.838), ("graph".into(), 0.865)]),
    };
    let spread = compare_benchmarks(&[eval], "orig", vec![]).rows[0]
        .retriever_spread
        .ok_or("no spread")?;
    if (spread - 0.027).abs() > METRIC_TOL {
        return Err(format!("spread {spread} != 0.027"));
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "4 dataset rows and spread 0.027 within {METRIC_TOL:e}"
    ))
}

fn equivalence_oracle() -> Check {
    let start = Instant::now();
    let mut runner = runner(500);
    let strategy = graphs::small_pair();
    let (mut agree, mut equivalent) = (0, 0);
    for _ in 0..500 {
        let (a, b) = draw(&mut runner, &strategy);
        let (g1, g2) = (a.graph(), b.graph());
        let mut ok = true;
        for mode in [EquivalenceMode::Strict, EquivalenceMode::Relaxed] {
            let report = structurally_equivalent(&g1, &g2, mode, 64).map_err(|e| e.to_string())?;
            ok &= report.equivalent == graphs::oracle(&g1, &g2, mode);
            if report.equivalent {
                ok &= graphs::witness_is_valid(
                    &g1,
                    &g2,
                    report.witness.as_deref().unwrap_or_default(),
                    mode,
                );
                equivalent += 1;
            }
        }
        agree += usize::from(ok);
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    if agree != 500 {
        return Err(format!("{agree}/500 pairs agree"));
    }
    Ok(format!(
        "500/500 pairs agree in both modes ({equivalent} equivalent verdicts)"
    ))
}

fn stats_invariance() -> Check {
    let mut runner = runner(200);
    let strategy = graphs::spec_strategy(8);
    for i in 0..200 {
        let g = draw(&mut runner, &strategy).graph();
        let pairs = g
            .nodes()
            .iter()
            .map(|v| MappingPair {
                seed: v.entity(),
                replacement: Entity::new(
                    format!("renamed {i} {}", v.surface),
                    v.semantic_type.clone(),
                ),
            })
            .collect();
        let mapping = EntityMapping::new(pairs, vec![]).map_err(|e| e.to_string())?;
        if graph_stats(&g) != graph_stats(&g.renamed(&mapping)) {
            return Err(format!("graph {i}: stats changed under renaming"));
        }
    }
    Ok("200/200 graphs keep identical stats".into())
}

fn perturbation() -> Check {
    let chain = vec![
        Triplet::new(
            Entity::new("Band", "band"),
            "has_member",
            Entity::new("Singer", "person"),
        ),
        Triplet::new(
            Entity::new("Singer", "person"),
            "has_nationality",
            Entity::new("Nationality", "nationality"),
        ),
    ];
    let p = cyclic_perturbation(&chain, 1);
    let report = structurally_equivalent(
        &build_context_graph(&chain),
        &build_context_graph(&p.triplets),
        EquivalenceMode::Relaxed,
        64,
    )
    .map_err(|e| e.to_string())?;
    if report.equivalent {
        return Err("3-node chain with k=1 is still equivalent".into());
    }
    let mut runner = runner(200);
    let strategy = (
        proptest::collection::vec((0..6usize, 0..3usize, 0..6usize), 0..8),
        0..20usize,
    );
    let set = |ts: &[Triplet]| {
        ts.iter()
            .flat_map(|t| [t.subject.key(), t.object.key()])
            .collect::<BTreeSet<_>>()
    };
    for i in 0..200 {
        let (spec, k) = draw(&mut runner, &strategy);
        let triplets: Vec<Triplet> = spec
            .iter()
            .map(|&(s, r, o)| {
                Triplet::new(
                    Entity::new(format!("e{s}"), "t"),
                    format!("r{r}"),
                    Entity::new(format!("e{o}"), "t"),
                )
            })
            .collect();
        let out = cyclic_perturbation(&triplets, k);
        if out.triplets.len() != triplets.len() || set(&out.triplets) != set(&triplets) {
            return Err(format!("input {i}: entity set or size changed"));
        }
    }
    Ok("chain not equivalent after shift 1; 200/200 inputs keep their entity set".into())
}

fn leakage_safety() -> Check {
    let start = Instant::now();
    let leak_first = (0..20).map(|i| i % 4).collect();
    let world = Arc::new(World::new(WorldConfig {
        n_seeds: 20,
        leak_first,
        exhaust: vec![5, 13],
        ..Default::default()
    }));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = generate_benchmark(
        &world.seeds(),
        &GenerationConfig::default(),
        &world.gateways(),
        &PromptLibrary::builtin(),
        dir.path(),
        &RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let outcomes = read_outcomes(&dir.path().join(OUTCOMES_FILE)).map_err(|e| e.to_string())?;
    let mut leaked_accepts = 0;
    for o in &outcomes {
        for pair in o.attempt_log.windows(2) {
            if !pair[0]
                .exclusions
                .iter()
                .all(|e| pair[1].exclusions.contains(e))
            {
                return Err(format!(
                    "{}: exclusions shrank after attempt {}",
                    o.seed_id, pair[0].attempt
                ));
            }
        }
        if o.generated.is_some()
            && o.attempt_log
                .last()
                .and_then(|a| a.verdict.as_ref())
                .is_none_or(|v| v.leaked)
        {
            leaked_accepts += 1;
        }
    }
    let audit =
        std::fs::read_to_string(dir.path().join(PROBE_AUDIT_FILE)).map_err(|e| e.to_string())?;
    let leaked_final: BTreeSet<(String, u64)> = audit
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["leaked"] == Value::Bool(true))
        .map(|v| {
            (
                v["seed_id"].as_str().unwrap().to_owned(),
                v["attempt"].as_u64().unwrap(),
            )
        })
        .collect();
    for o in outcomes.iter().filter(|o| o.generated.is_some()) {
        if leaked_final.contains(&(o.seed_id.clone(), u64::from(o.attempts))) {
            leaked_accepts += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    if leaked_accepts > 0 {
        return Err(format!(
            "{leaked_accepts} accepted samples with a leaked verdict"
        ));
    }
    Ok(format!(
        "20 seeds, {} accepted, 0 leaked accepts, exclusions monotone",
        run.manifest.accepted()
    ))
}

fn strip_timestamps(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["timestamp", "started_at", "finished_at", "updated_at"] {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timestamps);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timestamps),
        _ => {}
    }
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut v = if path.extension().is_some_and(|e| e == "jsonl") {
        Value::Array(
            text.lines()
                .map(|l| serde_json::from_str(l).unwrap())
                .collect(),
        )
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())?
    };
    strip_timestamps(&mut v);
    Ok(v)
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_seedforge"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "seedforge {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn determinism_and_resume() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let world = Arc::new(World::new(WorldConfig {
        n_seeds: 10,
        leak_first: vec![0, 1, 2, 1, 0, 3, 0, 1, 0, 2],
        exhaust: vec![7],
        ..Default::default()
    }));

    let seeds_path = root.join("seeds.jsonl");
    let seeds: Vec<String> = world
        .seeds()
        .iter()
        .map(|s| serde_json::to_string(s).unwrap())
        .collect();
    std::fs::write(&seeds_path, seeds.join("\n") + "\n").map_err(|e| e.to_string())?;
    let cassettes = root.join("cassettes");
    let recorder: Arc<dyn Backend> = Arc::new(CassetteBackend::record(
        world.backend("world"),
        Cassette::open(&cassettes.join("world.jsonl")).map_err(|e| e.to_string())?,
    ));
    let gateways = Gateways {
        generator: Gateway::new("generator", recorder.clone()),
        verifier: Gateway::new("verifier", recorder),
    };
    generate_benchmark(
        &world.seeds(),
        &GenerationConfig::default(),
        &gateways,
        &PromptLibrary::builtin(),
        &root.join("recorded"),
        &RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;

    let config = root.join("forge.toml");
    std::fs::write(&config, "[profiles.world]\nkind = \"openai\"\nmodel = \"recorded\"\n\n[roles]\ngenerator = \"world\"\nverifier_probe = \"world\"\n")
        .map_err(|e| e.to_string())?;
    let run = |cmd: &str, out: &str, extra: &[&str]| {
        let out = root.join(out);
        let mut args = vec![
            cmd,
            "--config",
            config.to_str().unwrap(),
            "--cassette-dir",
            cassettes.to_str().unwrap(),
            "--cassette-mode",
            "replay",
        ];
        args.extend([
            "--seeds",
            seeds_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        args.extend(extra);
        cli(&args)
    };
    run("generate", "a", &[])?;
    run("generate", "b", &[])?;
    for file in ["benchmark.jsonl", "manifest.json"] {
        let a = read_json(&root.join("a").join(file))?;
        let b = read_json(&root.join("b").join(file))?;
        if a != b {
            return Err(format!("{file} differs between replays"));
        }
    }

    run("generate", "c", &["--limit", "6"])?;
    run("resume", "c", &[])?;
    let full = read_json(&root.join("a/manifest.json"))?;
    let resumed = read_json(&root.join("c/manifest.json"))?;
    if full["usage"] != resumed["usage"] {
        return Err(format!(
            "usage {} after resume, {} in one pass",
            resumed["usage"], full["usage"]
        ));
    }
    if resumed["sessions"].as_array().map_or(0, Vec::len) != 2 {
        return Err("expected two sessions".into());
    }
    if read_json(&root.join("a/benchmark.jsonl"))? != read_json(&root.join("c/benchmark.jsonl"))? {
        return Err("resumed benchmark differs".into());
    }
    Ok(format!(
        "two replays identical modulo timestamps; resume after 6/10 seeds matches usage {}",
        full["usage"]
    ))
}

fn substitution() -> Check {
    let start = Instant::now();
    let mut runner = runner(1000);
    let (plain, fresh) = (
        substitution::case_strategy(false),
        substitution::case_strategy(true),
    );
    for i in 0..1000 {
        substitution::check(&draw(&mut runner, &plain)).map_err(|e| format!("case {i}: {e}"))?;
        let case = draw(&mut runner, &fresh);
        substitution::check(&case).map_err(|e| format!("fresh case {i}: {e}"))?;
        substitution::check_inverse(&case).map_err(|e| format!("inverse case {i}: {e}"))?;
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok("1000 cases: simultaneous, longest-match, inverse restores, untouched bytes".into())
}

fn semantic_fixture() -> Check {
    let table = BTreeMap::from([
        ("query".to_string(), vec![1.0, 0.0]),
        ("one".to_string(), vec![1.0, 0.0]),
        ("two".to_string(), vec![0.0, 1.0]),
        ("three".to_string(), vec![1.0, 1.0]),
        ("four".to_string(), vec![-1.0, 0.5]),
    ]);
    let corpus: Vec<Document> = [
        ("d1", "one"),
        ("d2", "two"),
        ("d3", "three"),
        ("d4", "four"),
    ]
    .iter()
    .map(|(id, body)| Document::new(*id, "", *body))
    .collect();
    let gw = Gateway::new(
        "embedder",
        Arc::new(MockBackend::new("embedder", MockScript::default()).with_embeddings(table)),
    );
    let got = semantic_retrieve("query", &corpus, 4, &gw).map_err(|e| e.to_string())?;
    let want = [
        ("d1", 1.0),
        ("d3", std::f64::consts::FRAC_1_SQRT_2),
        ("d2", 0.0),
        ("d4", -0.894427190999916),
    ];
    for (i, (id, score)) in want.iter().enumerate() {
        if got.doc_ids()[i] != *id || (got.scores()[i] - score).abs() > SCORE_TOL {
            return Err(format!(
                "rank {i}: got {} {}, want {id} {score}",
                got.doc_ids()[i],
                got.scores()[i]
            ));
        }
    }
    Ok(format!(
        "ranking d1,d3,d2,d4 with cosine scores within {SCORE_TOL:e}"
    ))
}

fn main() {
    let checks: [Criterion; 8] = [
        ("1 metric arithmetic", metric_arithmetic),
        ("2 equivalence vs brute force", equivalence_oracle),
        ("3 stats invariant under renaming", stats_invariance),
        ("4 cyclic perturbation", perturbation),
        ("5 leakage safety", leakage_safety),
        ("6 determinism and resume", determinism_and_resume),
        ("7 substitution properties", substitution),
        ("8 semantic retriever fixture", semantic_fixture),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("[SKIP] 9 live backend run: needs network credentials, not run offline");
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
