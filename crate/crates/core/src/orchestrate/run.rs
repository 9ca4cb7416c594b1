//! Benchmark runs: worker pool, progress log, resume and run artifacts.
//!
//! Output directory layout:
//! - `outcomes.jsonl`: one [`GenerationOutcome`] per processed seed. Appended
//!   as seeds finish, rewritten in seed order at the end of a session.
//! - `benchmark.jsonl`: accepted [`GeneratedSample`]s in seed order.
//! - `audit/probes.jsonl`: every leakage verdict of every attempt.
//! - `manifest.json`: config, template versions, counts, per-seed status,
//!   gateway usage per role and session timestamps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    generate_one, Gateways, GenerationConfig, GenerationOutcome, OrchestrateError, OutcomeStatus,
};
use crate::gateway::Usage;
use crate::model::{GeneratedSample, Sample};
use crate::pool::parallel_map;
use crate::prompts::PromptLibrary;
use crate::verify::Probe;

pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const BENCHMARK_FILE: &str = "benchmark.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROBE_AUDIT_FILE: &str = "audit/probes.jsonl";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep earlier outcomes from `outcomes.jsonl` and skip those seeds.
    pub resume: bool,
    /// With `resume`, re-run seeds whose earlier outcome was not accepted.
    pub retry_rejected: bool,
    /// Process at most this many pending seeds in this session.
    pub limit: Option<usize>,
    /// Recorded in the manifest.
    pub seeds_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStatusRow {
    pub seed_id: String,
    /// `None` while the seed is pending.
    pub status: Option<OutcomeStatus>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub started_at: String,
    pub finished_at: String,
    pub processed: usize,
    pub usage: BTreeMap<String, Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// `complete` once every seed has an outcome, else `partial`.
    pub state: String,
    pub run_seed: u64,
    pub config: GenerationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds_path: Option<String>,
    pub seeds_sha256: String,
    pub n_seeds: usize,
    pub template_versions: BTreeMap<String, u32>,
    pub generator: String,
    pub verifier: String,
    /// Outcome counts by status, plus `pending`.
    pub counts: BTreeMap<String, usize>,
    pub seeds: Vec<SeedStatusRow>,
    /// Calls per role summed over sessions.
    pub usage: BTreeMap<String, Usage>,
    pub sessions: Vec<Session>,
    pub updated_at: String,
}

impl Manifest {
    pub fn accepted(&self) -> usize {
        self.counts
            .get(OutcomeStatus::Accepted.as_str())
            .copied()
            .unwrap_or(0)
    }

    pub fn pending(&self) -> usize {
        self.counts.get("pending").copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeAuditRow {
    pub seed_id: String,
    pub attempt: u32,
    pub question: String,
    pub answer: String,
    pub leaked: bool,
    pub n_probes: usize,
    pub probes: Vec<Probe>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    /// Seeds processed in this session.
    pub processed: usize,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestrateError + '_ {
    move |source| OrchestrateError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn usage_delta(after: Usage, before: Usage) -> Usage {
    Usage {
        chat_calls: after.chat_calls - before.chat_calls,
        embed_calls: after.embed_calls - before.embed_calls,
        retries: after.retries - before.retries,
        failures: after.failures - before.failures,
    }
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), OrchestrateError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r).expect("serializable row");
        out.push(b'\n');
    }
    out
}

/// Reads a progress log. A truncated final line (from an interrupted write)
/// is skipped with a warning; any other malformed line is an error.
pub fn read_outcomes(path: &Path) -> Result<Vec<GenerationOutcome>, OrchestrateError> {
    let file = File::open(path).map_err(io_err(path))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(o) => out.push(o),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("{}: skipping truncated last line ({e})", path.display())
            }
            Err(e) => {
                return Err(OrchestrateError::Format {
                    path: path.display().to_string(),
                    message: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(out)
}

fn seeds_digest(seeds: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in seeds {
        h.update(serde_json::to_vec(s).expect("serializable sample"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Generates (or continues generating) a benchmark into `out_dir`.
pub fn generate_benchmark(
    seeds: &[Sample],
    config: &GenerationConfig,
    gateways: &Gateways,
    prompts: &PromptLibrary,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<BenchmarkRun, OrchestrateError> {
    config.validate()?;
    let mut ids = HashSet::new();
    for s in seeds {
        if !ids.insert(s.id.as_str()) {
            return Err(OrchestrateError::DuplicateSeed(s.id.clone()));
        }
    }
    std::fs::create_dir_all(out_dir.join("audit")).map_err(io_err(out_dir))?;
    let outcomes_path = out_dir.join(OUTCOMES_FILE);
    let manifest_path = out_dir.join(MANIFEST_FILE);

    let mut done: HashMap<String, GenerationOutcome> = HashMap::new();
    let mut previous: Option<Manifest> = None;
    if options.resume {
        if outcomes_path.exists() {
            for o in read_outcomes(&outcomes_path)? {
                if ids.contains(o.seed_id.as_str()) {
                    done.insert(o.seed_id.clone(), o);
                }
            }
        }
        if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
            previous = Some(
                serde_json::from_str(&text).map_err(|e| OrchestrateError::Format {
                    path: manifest_path.display().to_string(),
                    message: e.to_string(),
                })?,
            );
        }
        if options.retry_rejected {
            done.retain(|_, o| o.status == OutcomeStatus::Accepted);
        }
    } else if outcomes_path.exists() {
        log::warn!(
            "{}: starting a fresh run over existing outputs",
            out_dir.display()
        );
    }

    let pending: Vec<&Sample> = seeds.iter().filter(|s| !done.contains_key(&s.id)).collect();
    let batch: Vec<&Sample> = match options.limit {
        Some(n) => pending.into_iter().take(n).collect(),
        None => pending,
    };
    log::info!(
        "{} seeds, {} already done, {} in this session",
        seeds.len(),
        done.len(),
        batch.len()
    );

    // The progress log holds every kept outcome plus each new one as it lands.
    write_atomic(
        &outcomes_path,
        &jsonl(seeds.iter().filter_map(|s| done.get(&s.id))),
    )?;
    let log_file = OpenOptions::new()
        .append(true)
        .open(&outcomes_path)
        .map_err(io_err(&outcomes_path))?;
    let log_file = Mutex::new(log_file);

    let started_at = now();
    let before = (gateways.generator.usage(), gateways.verifier.usage());
    let fresh = parallel_map(&batch, config.workers, |_, seed| {
        let outcome = generate_one(seed, config, gateways, prompts);
        log::info!(
            "{}: {} after {} attempt(s)",
            outcome.seed_id,
            outcome.status.as_str(),
            outcome.attempts
        );
        let mut line = serde_json::to_vec(&outcome).expect("serializable outcome");
        line.push(b'\n');
        let mut f = log_file.lock().expect("progress log lock");
        f.write_all(&line).and_then(|_| f.flush()).map(|_| outcome)
    });
    drop(log_file);
    let processed = fresh.len();
    for o in fresh {
        let o = o.map_err(io_err(&outcomes_path))?;
        done.insert(o.seed_id.clone(), o);
    }
    let session_usage = BTreeMap::from([
        (
            "generator".to_owned(),
            usage_delta(gateways.generator.usage(), before.0),
        ),
        (
            "verifier".to_owned(),
            usage_delta(gateways.verifier.usage(), before.1),
        ),
    ]);

    let ordered: Vec<&GenerationOutcome> = seeds.iter().filter_map(|s| done.get(&s.id)).collect();
    write_atomic(&outcomes_path, &jsonl(&ordered))?;
    let accepted: Vec<&GeneratedSample> = ordered
        .iter()
        .filter_map(|o| o.generated.as_ref())
        .collect();
    write_atomic(&out_dir.join(BENCHMARK_FILE), &jsonl(&accepted))?;
    let audit: Vec<ProbeAuditRow> = ordered
        .iter()
        .flat_map(|o| {
            o.attempt_log.iter().filter_map(|a| {
                a.verdict.as_ref().map(|v| ProbeAuditRow {
                    seed_id: o.seed_id.clone(),
                    attempt: a.attempt,
                    question: a.question.clone().unwrap_or_default(),
                    answer: a.answer.clone().unwrap_or_default(),
                    leaked: v.leaked,
                    n_probes: v.n_probes,
                    probes: v.probes.clone(),
                })
            })
        })
        .collect();
    write_atomic(&out_dir.join(PROBE_AUDIT_FILE), &jsonl(&audit))?;

    let mut counts: BTreeMap<String, usize> = OutcomeStatus::ALL
        .iter()
        .map(|s| (s.as_str().to_owned(), 0))
        .collect();
    for o in &ordered {
        *counts
            .get_mut(o.status.as_str())
            .expect("all statuses present") += 1;
    }
    counts.insert("pending".into(), seeds.len() - ordered.len());
    let rows = seeds
        .iter()
        .map(|s| {
            let o = done.get(&s.id);
            SeedStatusRow {
                seed_id: s.id.clone(),
                status: o.map(|o| o.status),
                attempts: o.map_or(0, |o| o.attempts),
            }
        })
        .collect();
    let mut sessions = previous
        .as_ref()
        .map(|m| m.sessions.clone())
        .unwrap_or_default();
    sessions.push(Session {
        started_at,
        finished_at: now(),
        processed,
        usage: session_usage.clone(),
    });
    let mut usage = previous.map(|m| m.usage).unwrap_or_default();
    for (role, u) in session_usage {
        let total = usage.entry(role).or_default();
        *total = *total + u;
    }
    let manifest = Manifest {
        format_version: 1,
        state: if ordered.len() == seeds.len() {
            "complete"
        } else {
            "partial"
        }
        .into(),
        run_seed: config.run_seed,
        config: config.clone(),
        seeds_path: options.seeds_path.clone(),
        seeds_sha256: seeds_digest(seeds),
        n_seeds: seeds.len(),
        template_versions: prompts.versions(),
        generator: gateways.generator.backend_id().to_owned(),
        verifier: gateways.verifier.backend_id().to_owned(),
        counts,
        seeds: rows,
        usage,
        sessions,
        updated_at: now(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    write_atomic(&manifest_path, text.as_bytes())?;
    Ok(BenchmarkRun {
        out_dir: out_dir.to_owned(),
        manifest,
        processed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub run_seed: u64,
    pub dir: String,
    pub counts: BTreeMap<String, usize>,
    pub acceptance_rate: f64,
}

/// Independent generation runs over the same seeds, one per run seed, into
/// `out_dir/run-{i}`. Writes `out_dir/runs.json`.
pub fn regenerate(
    seeds: &[Sample],
    config: &GenerationConfig,
    gateways: &Gateways,
    prompts: &PromptLibrary,
    out_dir: &Path,
    run_seeds: &[u64],
    options: &RunOptions,
) -> Result<Vec<RunSummary>, OrchestrateError> {
    let mut summaries = Vec::new();
    for (i, &run_seed) in run_seeds.iter().enumerate() {
        let dir = out_dir.join(format!("run-{i}"));
        let cfg = GenerationConfig {
            run_seed,
            ..config.clone()
        };
        let run = generate_benchmark(seeds, &cfg, gateways, prompts, &dir, options)?;
        let decided = seeds.len() - run.manifest.pending();
        summaries.push(RunSummary {
            run: i,
            run_seed,
            dir: dir.display().to_string(),
            acceptance_rate: if decided == 0 {
                0.0
            } else {
                run.manifest.accepted() as f64 / decided as f64
            },
            counts: run.manifest.counts,
        });
    }
    let text = serde_json::to_string_pretty(&summaries).expect("serializable summaries");
    write_atomic(&out_dir.join("runs.json"), text.as_bytes())?;
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_last_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.jsonl");
        let o = GenerationOutcome {
            seed_id: "s".into(),
            status: OutcomeStatus::BudgetExhausted,
            attempts: 5,
            generated: None,
            rejection_log: vec![],
            attempt_log: vec![],
        };
        let mut bytes = jsonl([&o]);
        bytes.extend_from_slice(b"{\"seed_id\": \"t\", \"sta");
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(read_outcomes(&path).unwrap(), vec![o.clone()]);
        let mut bad = b"not json\n".to_vec();
        bad.extend(jsonl([&o]));
        std::fs::write(&path, &bad).unwrap();
        assert!(read_outcomes(&path).is_err());
    }
}
