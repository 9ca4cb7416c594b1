//! Per-seed generation loop and benchmark runs.
//!
//! Each seed goes through: seed graph extraction (once), entity mapping,
//! context transformation, structural re-verification and the no-context
//! leakage filter. Failed attempts retry up to `max_attempts` times.

mod run;

pub use run::{
    generate_benchmark, read_outcomes, regenerate, BenchmarkRun, Manifest, ProbeAuditRow,
    RunOptions, RunSummary, SeedStatusRow, Session, BENCHMARK_FILE, MANIFEST_FILE, OUTCOMES_FILE,
    PROBE_AUDIT_FILE,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::Gateway;
use crate::graph::{
    build_context_graph, cyclic_perturbation, structurally_equivalent, EquivalenceError,
    EquivalenceMode, ExtractionError, Extractor, DEFAULT_SIZE_LIMIT,
};
use crate::model::{
    validate_sample, ContextPath, Entity, EntityMapping, GeneratedSample, GraphPair, Provenance,
    ReasoningGraph, Sample, Triplet,
};
use crate::prompts::PromptLibrary;
use crate::transform::{
    apply_mapping, distinct_entities, map_triplets, TransformError, Transformer, DEFAULT_STYLE_HINT,
};
use crate::verify::{LeakageProbe, LeakageVerdict, VerifyError, DEFAULT_PROBES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Temperatures {
    pub extraction: f64,
    pub proposal: f64,
    pub regeneration: f64,
    pub probe: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            extraction: 0.0,
            proposal: 0.8,
            regeneration: 0.7,
            probe: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub context_path: ContextPath,
    pub n_probes: usize,
    pub max_attempts: u32,
    pub equivalence: EquivalenceMode,
    pub size_limit: usize,
    pub run_seed: u64,
    pub workers: usize,
    /// Cyclic shift `k` for the perturbation study; needs the triplet path.
    pub perturbation_shift: Option<usize>,
    pub temperatures: Temperatures,
    pub style_hint: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            context_path: ContextPath::SurfaceSubstitution,
            n_probes: DEFAULT_PROBES,
            max_attempts: 5,
            equivalence: EquivalenceMode::Strict,
            size_limit: DEFAULT_SIZE_LIMIT,
            run_seed: 0,
            workers: 4,
            perturbation_shift: None,
            temperatures: Temperatures::default(),
            style_hint: DEFAULT_STYLE_HINT.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchestrateError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("duplicate seed id `{0}`")]
    DuplicateSeed(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), OrchestrateError> {
        let bad = |m: &str| Err(OrchestrateError::Config(m.into()));
        if self.n_probes == 0 {
            return bad("n_probes must be >= 1");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if let Some(k) = self.perturbation_shift {
            if k == 0 {
                return bad("perturbation_shift must be >= 1");
            }
            if self.context_path != ContextPath::TripletRegeneration {
                return bad("perturbation needs context_path = \"triplet_regeneration\"");
            }
        }
        let t = &self.temperatures;
        if [t.extraction, t.proposal, t.regeneration, t.probe]
            .iter()
            .any(|x| !(0.0..=2.0).contains(x))
        {
            return bad("temperatures must lie in [0, 2]");
        }
        Ok(())
    }
}

/// Gateways bound to the two generation roles.
#[derive(Debug, Clone)]
pub struct Gateways {
    pub generator: Gateway,
    pub verifier: Gateway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Accepted,
    RejectedExtraction,
    RejectedStructure,
    RejectedLeakage,
    BudgetExhausted,
}

impl OutcomeStatus {
    pub const ALL: [OutcomeStatus; 5] = [
        OutcomeStatus::Accepted,
        OutcomeStatus::RejectedExtraction,
        OutcomeStatus::RejectedStructure,
        OutcomeStatus::RejectedLeakage,
        OutcomeStatus::BudgetExhausted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeStatus::Accepted => "accepted",
            OutcomeStatus::RejectedExtraction => "rejected_extraction",
            OutcomeStatus::RejectedStructure => "rejected_structure",
            OutcomeStatus::RejectedLeakage => "rejected_leakage",
            OutcomeStatus::BudgetExhausted => "budget_exhausted",
        }
    }
}

/// Pipeline stage an attempt failed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validation,
    Extraction,
    Mapping,
    Regeneration,
    Structure,
    Leakage,
}

impl Stage {
    fn is_structural(self) -> bool {
        matches!(
            self,
            Stage::Validation | Stage::Regeneration | Stage::Structure
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 0 for failures before the first attempt.
    pub attempt: u32,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    /// Exclusion list the attempt's proposals were asked to avoid.
    pub exclusions: Vec<String>,
    pub replacements: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<LeakageVerdict>,
}

/// Result of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub seed_id: String,
    pub status: OutcomeStatus,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<GeneratedSample>,
    pub rejection_log: Vec<Rejection>,
    pub attempt_log: Vec<AttemptRecord>,
}

/// Stable per-seed nonce passed to replacement proposals.
pub fn nonce(run_seed: u64, seed_id: &str) -> String {
    hex::encode(&Sha256::digest(format!("{run_seed}:{seed_id}").as_bytes())[..8])
}

fn probe_seed_base(run_seed: u64, seed_id: &str, attempt: u32) -> u64 {
    let digest = Sha256::digest(format!("{run_seed}:{seed_id}:probe:{attempt}").as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Upper bounds on gateway calls for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CallBudget {
    pub generator: u64,
    pub verifier: u64,
}

/// Worst-case calls for a seed whose graphs hold `n_entities` distinct
/// entities. Extraction makes at most 3 calls per graph, proposals 4 per
/// entity, regeneration 3.
pub fn call_budget(config: &GenerationConfig, n_entities: usize) -> CallBudget {
    let n = n_entities as u64;
    let attempts = u64::from(config.max_attempts);
    let regen = if config.context_path == ContextPath::TripletRegeneration {
        3
    } else {
        0
    };
    CallBudget {
        generator: 6 + attempts * (4 * n + regen + 6),
        verifier: attempts * config.n_probes as u64,
    }
}

enum Halt {
    /// Ends the seed with this status.
    Final(OutcomeStatus, Stage, String),
    /// Ends the attempt; the loop continues.
    Retry(Stage, String),
}

fn extraction_halt(stage: Stage, e: ExtractionError) -> Halt {
    match e {
        ExtractionError::Gateway(_) | ExtractionError::Prompt(_) => {
            Halt::Final(OutcomeStatus::RejectedExtraction, stage, e.to_string())
        }
        other => Halt::Retry(stage, other.to_string()),
    }
}

fn transform_halt(stage: Stage, e: TransformError) -> Halt {
    match e {
        TransformError::Gateway(_) | TransformError::Prompt(_) => {
            Halt::Final(OutcomeStatus::RejectedExtraction, stage, e.to_string())
        }
        other => Halt::Retry(stage, other.to_string()),
    }
}

struct SeedGraphs {
    question: ReasoningGraph,
    triplets: Vec<Triplet>,
    context: ReasoningGraph,
}

/// Runs the generation loop for one seed. Never panics on model output;
/// every failure ends up in the outcome.
pub fn generate_one(
    seed: &Sample,
    config: &GenerationConfig,
    gateways: &Gateways,
    prompts: &PromptLibrary,
) -> GenerationOutcome {
    let mut outcome = GenerationOutcome {
        seed_id: seed.id.clone(),
        status: OutcomeStatus::RejectedExtraction,
        attempts: 0,
        generated: None,
        rejection_log: Vec::new(),
        attempt_log: Vec::new(),
    };
    let violations = validate_sample(seed);
    if !violations.is_empty() {
        let reason = violations
            .iter()
            .map(|v| format!("{}: {}", v.field, v.rule))
            .collect::<Vec<_>>()
            .join("; ");
        outcome.rejection_log.push(Rejection {
            attempt: 0,
            stage: Stage::Validation,
            reason,
        });
        return outcome;
    }
    let extractor = Extractor::new(&gateways.generator, prompts)
        .with_temperature(config.temperatures.extraction)
        .with_seed(config.run_seed);
    let seed_graphs = match extract_seed(&extractor, seed, config) {
        Ok(g) => g,
        Err(reason) => {
            outcome.rejection_log.push(Rejection {
                attempt: 0,
                stage: Stage::Extraction,
                reason,
            });
            return outcome;
        }
    };
    let all: Vec<Entity> = seed_graphs
        .question
        .nodes()
        .iter()
        .chain(seed_graphs.context.nodes())
        .map(|n| n.entity())
        .collect();
    let entities = distinct_entities(&all);
    let nonce = nonce(config.run_seed, &seed.id);
    let mut exclusions: Vec<String> = Vec::new();

    for attempt in 1..=config.max_attempts {
        outcome.attempts = attempt;
        let mut record = AttemptRecord {
            attempt,
            exclusions: exclusions.clone(),
            replacements: Vec::new(),
            question: None,
            answer: None,
            verdict: None,
        };
        let result = run_attempt(
            seed,
            &seed_graphs,
            &entities,
            &exclusions,
            attempt,
            &nonce,
            config,
            gateways,
            prompts,
            &extractor,
            &mut record,
        );
        outcome.attempt_log.push(record);
        match result {
            Ok(generated) => {
                outcome.status = OutcomeStatus::Accepted;
                outcome.generated = Some(*generated);
                return outcome;
            }
            Err(Halt::Final(status, stage, reason)) => {
                outcome.rejection_log.push(Rejection {
                    attempt,
                    stage,
                    reason,
                });
                outcome.status = status;
                return outcome;
            }
            Err(Halt::Retry(stage, reason)) => {
                if stage == Stage::Leakage {
                    let record = outcome.attempt_log.last().expect("just pushed");
                    for r in &record.replacements {
                        if !exclusions.contains(r) {
                            exclusions.push(r.clone());
                        }
                    }
                }
                outcome.rejection_log.push(Rejection {
                    attempt,
                    stage,
                    reason,
                });
            }
        }
    }
    outcome.status = if outcome
        .rejection_log
        .iter()
        .all(|r| r.stage.is_structural())
    {
        OutcomeStatus::RejectedStructure
    } else {
        OutcomeStatus::BudgetExhausted
    };
    outcome
}

fn extract_seed(
    extractor: &Extractor<'_>,
    seed: &Sample,
    config: &GenerationConfig,
) -> Result<SeedGraphs, String> {
    let question = extractor.question_graph(seed).map_err(|e| e.to_string())?;
    let triplets = extractor
        .triplets(&seed.contexts)
        .map_err(|e| e.to_string())?;
    if triplets.is_empty() && config.context_path == ContextPath::TripletRegeneration {
        return Err("no triplets extracted from the seed contexts".into());
    }
    let context = build_context_graph(&triplets);
    Ok(SeedGraphs {
        question,
        triplets,
        context,
    })
}

fn equivalence_gate(
    seed: &ReasoningGraph,
    transformed: &ReasoningGraph,
    mode: EquivalenceMode,
    size_limit: usize,
    what: &str,
) -> Result<(), Halt> {
    match structurally_equivalent(seed, transformed, mode, size_limit) {
        Ok(r) if r.equivalent => Ok(()),
        Ok(r) => Err(Halt::Retry(
            Stage::Structure,
            format!(
                "{what} graph not equivalent: {:?}",
                r.failure_reason.expect("set when not equivalent")
            ),
        )),
        Err(e @ EquivalenceError::SizeLimitExceeded(..)) => Err(Halt::Final(
            OutcomeStatus::RejectedStructure,
            Stage::Structure,
            format!("{what} graph: {e}"),
        )),
        Err(e) => Err(Halt::Retry(Stage::Structure, format!("{what} graph: {e}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_attempt(
    seed: &Sample,
    seed_graphs: &SeedGraphs,
    entities: &[Entity],
    exclusions: &[String],
    attempt: u32,
    nonce: &str,
    config: &GenerationConfig,
    gateways: &Gateways,
    prompts: &PromptLibrary,
    extractor: &Extractor<'_>,
    record: &mut AttemptRecord,
) -> Result<Box<GeneratedSample>, Halt> {
    let transformer = Transformer::new(&gateways.generator, prompts)
        .with_temperatures(
            config.temperatures.proposal,
            config.temperatures.regeneration,
        )
        .with_attempt(nonce, attempt);
    let mapping: EntityMapping = transformer
        .build_mapping_for(entities, exclusions)
        .map_err(|e| transform_halt(Stage::Mapping, e))?;
    record.replacements = mapping.replacement_surfaces();

    let mut sample = apply_mapping(seed, &mapping);
    if config.context_path == ContextPath::TripletRegeneration {
        let mut facts = map_triplets(&seed_graphs.triplets, &mapping);
        if let Some(k) = config.perturbation_shift {
            facts = cyclic_perturbation(&facts, k).triplets;
        }
        let docs = transformer
            .regenerate_context(&facts, &mapping, &config.style_hint)
            .map_err(|e| transform_halt(Stage::Regeneration, e))?;
        sample.supporting_ids = Some(docs.iter().map(|d| d.doc_id.clone()).collect());
        sample.contexts = docs;
    }
    record.question = Some(sample.question.clone());
    record.answer = Some(sample.answer.clone());
    let violations = validate_sample(&sample);
    if !violations.is_empty() {
        let reason = violations
            .iter()
            .map(|v| format!("{}: {}", v.field, v.rule))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Halt::Retry(Stage::Validation, reason));
    }

    let triplets = extractor
        .triplets(&sample.contexts)
        .map_err(|e| extraction_halt(Stage::Structure, e))?;
    let context = build_context_graph(&triplets);
    let question = if config.perturbation_shift.is_some() {
        // The rewired context no longer supports the question's chain, so the
        // question graph is carried over through the mapping.
        seed_graphs.question.renamed(&mapping)
    } else {
        let question = extractor
            .question_graph(&sample)
            .map_err(|e| extraction_halt(Stage::Structure, e))?;
        equivalence_gate(
            &seed_graphs.question,
            &question,
            config.equivalence,
            config.size_limit,
            "question",
        )?;
        equivalence_gate(
            &seed_graphs.context,
            &context,
            config.equivalence,
            config.size_limit,
            "context",
        )?;
        question
    };

    let probe = LeakageProbe::new(&gateways.verifier, prompts).with_sampling(
        config.temperatures.probe,
        probe_seed_base(config.run_seed, &seed.id, attempt),
    );
    let verdict = match probe.check(
        &sample.question,
        &sample.answer,
        sample.choices(),
        config.n_probes,
    ) {
        Ok(v) => v,
        Err(e @ (VerifyError::Gateway { .. } | VerifyError::Prompt(_))) => {
            return Err(Halt::Final(
                OutcomeStatus::RejectedLeakage,
                Stage::Leakage,
                format!("leakage unverified: {e}"),
            ))
        }
        Err(e) => {
            return Err(Halt::Final(
                OutcomeStatus::RejectedLeakage,
                Stage::Leakage,
                e.to_string(),
            ))
        }
    };
    let leaked = verdict.leaked;
    record.verdict = Some(verdict);
    if leaked {
        return Err(Halt::Retry(
            Stage::Leakage,
            "answered without context".into(),
        ));
    }

    sample.id = format!("{}-gen", seed.id);
    Ok(Box::new(GeneratedSample {
        seed_id: seed.id.clone(),
        sample,
        mapping,
        context_path: config.context_path,
        graphs: GraphPair { question, context },
        seed_graphs: GraphPair {
            question: seed_graphs.question.clone(),
            context: seed_graphs.context.clone(),
        },
        provenance: Provenance {
            attempts: attempt,
            generator: gateways.generator.backend_id().to_owned(),
            verifier: gateways.verifier.backend_id().to_owned(),
            run_seed: config.run_seed,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        },
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(GenerationConfig::default().validate().is_ok());
        let c = GenerationConfig {
            perturbation_shift: Some(1),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = GenerationConfig {
            perturbation_shift: Some(1),
            context_path: ContextPath::TripletRegeneration,
            ..Default::default()
        };
        assert!(c.validate().is_ok());
        assert!(GenerationConfig {
            n_probes: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let c = GenerationConfig {
            run_seed: 7,
            ..Default::default()
        };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<GenerationConfig>(&text).unwrap(), c);
        let partial: GenerationConfig =
            toml::from_str("max_attempts = 2\n[temperatures]\nprobe = 0.0\n").unwrap();
        assert_eq!(partial.max_attempts, 2);
        assert_eq!(partial.temperatures.probe, 0.0);
        assert_eq!(partial.temperatures.proposal, 0.8);
    }

    #[test]
    fn nonce_is_stable_and_seed_specific() {
        assert_eq!(nonce(1, "a"), nonce(1, "a"));
        assert_ne!(nonce(1, "a"), nonce(2, "a"));
        assert_ne!(nonce(1, "a"), nonce(1, "b"));
        assert_eq!(nonce(1, "a").len(), 16);
    }

    #[test]
    fn budget_counts_worst_case() {
        let c = GenerationConfig {
            max_attempts: 2,
            n_probes: 3,
            ..Default::default()
        };
        assert_eq!(
            call_budget(&c, 3),
            CallBudget {
                generator: 6 + 2 * (12 + 6),
                verifier: 6
            }
        );
    }
}
