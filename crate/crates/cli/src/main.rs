//! `seedforge` command-line interface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use seedforge::config::{Connections, ForgeConfig};
use seedforge::eval::{
    compare_benchmarks, evaluate_variant, pooled_corpus, Retriever, RunOptions as EvalOptions,
    VariantEvaluation, POOLED_CORPUS_NOTE,
};
use seedforge::gateway::{CassetteMode, UreqTransport};
use seedforge::graph::{graph_stats, GraphStats};
use seedforge::import::{import, read_samples, ImportFormat};
use seedforge::model::{ContextPath, GeneratedSample, Sample};
use seedforge::orchestrate::{generate_benchmark, regenerate, RunOptions};

#[derive(Parser)]
#[command(
    name = "seedforge",
    version,
    about = "Generate and audit leakage-resistant multi-hop QA benchmarks"
)]
struct Cli {
    /// Log at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark from seed samples.
    Generate(GenerateArgs),
    /// Continue an interrupted generation run.
    Resume(GenerateArgs),
    /// Generate with cyclically rewired contexts (structure study).
    Perturb {
        #[command(flatten)]
        args: GenerateArgs,
        /// Cyclic shift applied to the triplet objects.
        #[arg(long, default_value_t = 1)]
        shift: usize,
    },
    /// Leakage error and answerability of an existing dataset.
    Audit(AuditArgs),
    /// Compare benchmark variants under no-context, gold and retriever conditions.
    Evaluate(EvaluateArgs),
    /// Graph statistics of seed and generated graphs.
    Stats(StatsArgs),
    /// Convert a public dataset dump to sample JSONL.
    Import(ImportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CassetteArg {
    Record,
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Surface,
    Triplet,
}

#[derive(Args)]
struct ModelArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of per-profile cassettes (`{profile}.jsonl`).
    #[arg(long, requires = "cassette_mode")]
    cassette_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    cassette_mode: Option<CassetteArg>,
}

impl ModelArgs {
    fn load(&self) -> Result<ForgeConfig> {
        let config = match &self.config {
            Some(p) => ForgeConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ForgeConfig::default(),
        };
        Ok(match (&self.cassette_dir, self.cassette_mode) {
            (Some(dir), Some(mode)) => {
                let mode = match mode {
                    CassetteArg::Record => CassetteMode::Record,
                    CassetteArg::Replay => CassetteMode::Replay,
                };
                std::fs::create_dir_all(dir)?;
                config.with_cassettes(dir, mode)
            }
            _ => config,
        })
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Seed-selection file: sample JSONL.
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Process at most this many pending seeds.
    #[arg(long)]
    limit: Option<usize>,
    /// Skip seeds that already have an outcome.
    #[arg(long)]
    resume: bool,
    /// With resume, re-run seeds that were not accepted.
    #[arg(long)]
    retry_rejected: bool,
    /// Independent runs with run seeds `run_seed + i` under `out/run-{i}`.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    run_seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(long)]
    n_probes: Option<usize>,
    #[arg(long, value_enum)]
    context_path: Option<PathArg>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Answering model profiles; defaults to `roles.evaluator`.
    #[arg(long = "model")]
    models: Vec<String>,
    /// Retrievers from the config; defaults to all configured.
    #[arg(long = "retriever")]
    retrievers: Vec<String>,
    /// Skip retriever conditions.
    #[arg(long)]
    no_retrievers: bool,
    #[arg(long)]
    top_k: Option<usize>,
    /// Classify no-context responses as leak, factual inconsistency or non-leaking.
    #[arg(long)]
    quality: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    dataset_id: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Sample JSONL.
    #[arg(long)]
    samples: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// `NAME=PATH` of a sample or benchmark JSONL; repeatable.
    #[arg(long = "variant", required = true)]
    variants: Vec<String>,
    /// Variant the deltas are computed against.
    #[arg(long, default_value = "orig")]
    baseline: String,
}

#[derive(Args)]
struct StatsArgs {
    /// Benchmark JSONL written by `generate`.
    #[arg(long)]
    benchmark: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// hotpotqa, 2wiki, qasc or wikihop.
    #[arg(long)]
    format: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Keep only the first N records.
    #[arg(long)]
    limit: Option<usize>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Generate(args) => generate(args, None, false),
        Command::Resume(args) => generate(args, None, true),
        Command::Perturb { args, shift } => generate(args, Some(shift), false),
        Command::Audit(args) => audit(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Stats(args) => stats(args),
        Command::Import(args) => import_cmd(args),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Sample JSONL or benchmark JSONL (the generated sample of each row).
fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let text = read_to_string(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
    let value: serde_json::Value =
        serde_json::from_str(first).with_context(|| format!("{}: line 1", path.display()))?;
    if value.get("seed_id").is_some() && value.get("sample").is_some() {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str::<GeneratedSample>(l)?.sample))
            .collect::<Result<_>>()
            .with_context(|| format!("reading benchmark {}", path.display()))
    } else {
        read_samples(&text).with_context(|| format!("reading samples {}", path.display()))
    }
}

fn generate(args: GenerateArgs, shift: Option<usize>, resume: bool) -> Result<()> {
    let mut config = args.model.load()?;
    let g = &mut config.generation;
    if let Some(v) = args.run_seed {
        g.run_seed = v;
    }
    if let Some(v) = args.workers {
        g.workers = v;
    }
    if let Some(v) = args.max_attempts {
        g.max_attempts = v;
    }
    if let Some(v) = args.n_probes {
        g.n_probes = v;
    }
    if let Some(p) = args.context_path {
        g.context_path = match p {
            PathArg::Surface => ContextPath::SurfaceSubstitution,
            PathArg::Triplet => ContextPath::TripletRegeneration,
        };
    }
    if shift.is_some() {
        g.context_path = ContextPath::TripletRegeneration;
        g.perturbation_shift = shift;
    }
    config.validate()?;
    let seeds = read_samples(&read_to_string(&args.seeds)?)?;
    let prompts = config.prompts()?;
    let gateways = Connections::new().generation(&config)?;
    let options = RunOptions {
        resume: resume || args.resume,
        retry_rejected: args.retry_rejected,
        limit: args.limit,
        seeds_path: Some(args.seeds.display().to_string()),
    };
    match args.runs {
        Some(n) => {
            let run_seeds: Vec<u64> = (0..n as u64)
                .map(|i| config.generation.run_seed + i)
                .collect();
            let summaries = regenerate(
                &seeds,
                &config.generation,
                &gateways,
                &prompts,
                &args.out,
                &run_seeds,
                &options,
            )?;
            for s in summaries {
                println!(
                    "run {} (seed {}): acceptance {:.3} {:?}",
                    s.run, s.run_seed, s.acceptance_rate, s.counts
                );
            }
        }
        None => {
            let run = generate_benchmark(
                &seeds,
                &config.generation,
                &gateways,
                &prompts,
                &args.out,
                &options,
            )?;
            println!(
                "{}: {} processed this session, {} accepted of {} seeds ({})",
                args.out.display(),
                run.processed,
                run.manifest.accepted(),
                run.manifest.n_seeds,
                run.manifest.state
            );
        }
    }
    Ok(())
}

fn run_evaluations(
    args: &EvalArgs,
    variants: &[(String, Vec<Sample>)],
) -> Result<Vec<VariantEvaluation>> {
    let config = args.model.load()?;
    let prompts = config.prompts()?;
    let mut conns = Connections::new();
    let models = if args.models.is_empty() {
        config.roles.evaluator.clone()
    } else {
        args.models.clone()
    };
    if models.is_empty() {
        bail!("no answering model: pass --model or set roles.evaluator");
    }
    let retriever_names: Vec<String> = if args.no_retrievers {
        Vec::new()
    } else if args.retrievers.is_empty() {
        config.retrievers.keys().cloned().collect()
    } else {
        args.retrievers.clone()
    };
    let top_k = args.top_k.unwrap_or(config.top_k);
    let options = EvalOptions {
        workers: args.workers.unwrap_or(4),
        classify_quality: args.quality,
        ..Default::default()
    };
    std::fs::create_dir_all(&args.out)?;

    let mut evaluations = Vec::new();
    for (variant, samples) in variants {
        let corpus = pooled_corpus(samples);
        let mut retrievers: Vec<Box<dyn Retriever>> = Vec::new();
        if !retriever_names.is_empty() {
            let embedder = conns.embedder(&config)?;
            let work_dir = args.out.join(format!("corpus-{variant}"));
            std::fs::create_dir_all(&work_dir)?;
            for name in &retriever_names {
                let spec = config
                    .retrievers
                    .get(name)
                    .with_context(|| format!("unknown retriever `{name}`"))?;
                retrievers.push(spec.build(
                    name,
                    &corpus,
                    &embedder,
                    &work_dir,
                    Arc::new(UreqTransport),
                )?);
            }
        }
        let refs: Vec<&dyn Retriever> = retrievers.iter().map(|r| r.as_ref()).collect();
        for model in &models {
            let gateway = conns.gateway(&config, model, model)?;
            let run = evaluate_variant(
                samples,
                &args.dataset_id,
                variant,
                &gateway,
                &refs,
                &corpus,
                top_k,
                &prompts,
                &options,
            )?;
            let path = args.out.join(format!("records-{variant}-{model}.jsonl"));
            let mut text = String::new();
            for r in &run.records {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            std::fs::write(&path, text)?;
            let m = &run.evaluation.metrics;
            println!(
                "{variant} / {model}: leakage error {:.3}, answerability {:.3} (no-ctx {:.3}, gold {:.3}, n={})",
                m.leakage_error, m.answerability_accuracy, m.acc_no_ctx, m.acc_gold, m.n_questions
            );
            evaluations.push(run.evaluation);
        }
    }
    Ok(evaluations)
}

fn write_report(out: &Path, evaluations: &[VariantEvaluation], baseline: &str) -> Result<()> {
    let report = compare_benchmarks(evaluations, baseline, vec![POOLED_CORPUS_NOTE.into()]);
    report.write(&out.join("report.json"), &out.join("report.csv"))?;
    println!("report: {}", out.join("report.json").display());
    Ok(())
}

fn audit(args: AuditArgs) -> Result<()> {
    let samples = load_samples(&args.samples)?;
    let evaluations = run_evaluations(&args.eval, &[("orig".to_owned(), samples)])?;
    write_report(&args.eval.out, &evaluations, "orig")
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut variants = Vec::new();
    for v in &args.variants {
        let (name, path) = v
            .split_once('=')
            .with_context(|| format!("--variant `{v}` is not NAME=PATH"))?;
        variants.push((name.to_owned(), load_samples(Path::new(path))?));
    }
    let evaluations = run_evaluations(&args.eval, &variants)?;
    write_report(&args.eval.out, &evaluations, &args.baseline)
}

#[derive(Serialize)]
struct StatsRow {
    seed_id: String,
    graph: &'static str,
    seed: GraphStats,
    generated: GraphStats,
}

#[derive(Serialize)]
struct StatsReport {
    rows: Vec<StatsRow>,
    /// Mean relative deviation |generated - seed| / seed per statistic and graph kind.
    mean_relative_deviation: BTreeMap<String, f64>,
}

fn rel(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        if b == 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        (b - a).abs() / a.abs()
    }
}

fn stats(args: StatsArgs) -> Result<()> {
    let text = read_to_string(&args.benchmark)?;
    let mut rows = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let g: GeneratedSample =
            serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        for (kind, seed, gen) in [
            ("question", &g.seed_graphs.question, &g.graphs.question),
            ("context", &g.seed_graphs.context, &g.graphs.context),
        ] {
            rows.push(StatsRow {
                seed_id: g.seed_id.clone(),
                graph: kind,
                seed: graph_stats(seed),
                generated: graph_stats(gen),
            });
        }
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let pairs = [
            ("n_nodes", r.seed.n_nodes as f64, r.generated.n_nodes as f64),
            ("n_edges", r.seed.n_edges as f64, r.generated.n_edges as f64),
            ("density", r.seed.density, r.generated.density),
            ("avg_degree", r.seed.avg_degree, r.generated.avg_degree),
        ];
        for (name, a, b) in pairs {
            let e = sums
                .entry(format!("{}.{name}", r.graph))
                .or_insert((0.0, 0));
            e.0 += rel(a, b);
            e.1 += 1;
        }
    }
    let report = StatsReport {
        rows,
        mean_relative_deviation: sums
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    match args.out {
        Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn import_cmd(args: ImportArgs) -> Result<()> {
    let format: ImportFormat = args.format.parse()?;
    let mut samples = import(&read_to_string(&args.input)?, format)?;
    if let Some(n) = args.limit {
        samples.truncate(n);
    }
    let mut text = String::new();
    for s in &samples {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    std::fs::write(&args.output, text)
        .with_context(|| format!("writing {}", args.output.display()))?;
    println!("{} samples -> {}", samples.len(), args.output.display());
    Ok(())
}
