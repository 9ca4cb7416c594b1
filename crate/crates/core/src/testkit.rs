//! Scripted offline world for integration tests.
//!
//! Every seed is a two-hop chain `band -> lead singer -> nationality` with
//! made-up names. A pure responder answers all seven prompt templates by
//! reading the fixed sentence shapes back out of the prompt, so it keeps
//! working after names are substituted or passages regenerated.
//!
//! Replacement candidates come from a per-seed, per-role pool of
//! `POOL` names; the proposal nonce picks a bucket of `BUCKET` names and the
//! first candidate not on the avoid list wins. A band candidate at bucket
//! position `p` leaks (the probe lists every nationality candidate of the
//! seed) when `p < leak_first[seed]` or the seed is in `exhaust`.

use std::collections::HashMap;
use std::sync::Arc;

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::gateway::{Backend, ChatRequest, Gateway, MockBackend};
use crate::model::{Document, Sample};
use crate::orchestrate::Gateways;
use crate::text::{mentions, normalize_surface};

pub const POOL: usize = 40;
pub const BUCKET: usize = 10;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ru", "te", "va", "zo", "ni", "pe", "su", "da", "fi", "go", "ha", "je", "bo",
];

const BAND_SENTENCE: &str = " is a reggae band";
const SINGER_SENTENCE: &str = "Its lead singer is ";
const QUESTION_PREFIX: &str = "What is the nationality of the lead singer of ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorldRole {
    Band,
    Singer,
    Nationality,
}

impl WorldRole {
    pub fn semantic_type(self) -> &'static str {
        match self {
            WorldRole::Band => "band",
            WorldRole::Singer => "person",
            WorldRole::Nationality => "nationality",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldConfig {
    pub n_seeds: usize,
    /// Per seed, how many band candidates at the head of a bucket leak.
    pub leak_first: Vec<usize>,
    /// Seeds whose band candidates always leak.
    pub exhaust: Vec<usize>,
    /// Omit the nationality triplet from passages about a replaced band.
    pub drop_edge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Info {
    seed: usize,
    role: WorldRole,
    /// `None` for seed surfaces.
    index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedFacts {
    pub band: String,
    pub singer: String,
    pub nationality: String,
}

#[derive(Debug)]
pub struct World {
    config: WorldConfig,
    facts: Vec<SeedFacts>,
    candidates: Vec<HashMap<WorldRole, Vec<String>>>,
    registry: HashMap<String, Info>,
}

fn word(k: usize) -> String {
    let digits = [(k / 256) % 16, (k / 16) % 16, k % 16];
    let s: String = digits.iter().map(|&d| SYLLABLES[d]).collect();
    let mut c = s.chars();
    let first = c.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

fn name(role: WorldRole, seed_surface: bool, k: usize) -> String {
    let w = word(k);
    match (role, seed_surface) {
        (WorldRole::Band, true) => format!("{w} Band"),
        (WorldRole::Band, false) => format!("{w} Collective"),
        (WorldRole::Singer, true) => format!("Ada {w}"),
        (WorldRole::Singer, false) => format!("Ilse {w}"),
        (WorldRole::Nationality, true) => format!("{w}ian"),
        (WorldRole::Nationality, false) => format!("{w}ese"),
    }
}

const ROLES: [WorldRole; 3] = [WorldRole::Band, WorldRole::Singer, WorldRole::Nationality];

impl World {
    pub fn new(config: WorldConfig) -> Self {
        assert!(config.n_seeds * POOL < 4096, "world name space exhausted");
        let mut registry = HashMap::new();
        let mut facts = Vec::new();
        let mut candidates = Vec::new();
        for seed in 0..config.n_seeds {
            let f = SeedFacts {
                band: name(WorldRole::Band, true, seed),
                singer: name(WorldRole::Singer, true, seed),
                nationality: name(WorldRole::Nationality, true, seed),
            };
            for (role, s) in [
                (WorldRole::Band, &f.band),
                (WorldRole::Singer, &f.singer),
                (WorldRole::Nationality, &f.nationality),
            ] {
                registry.insert(
                    normalize_surface(s),
                    Info {
                        seed,
                        role,
                        index: None,
                    },
                );
            }
            let mut pools = HashMap::new();
            for role in ROLES {
                let pool: Vec<String> = (0..POOL)
                    .map(|j| name(role, false, seed * POOL + j))
                    .collect();
                for (j, s) in pool.iter().enumerate() {
                    registry.insert(
                        normalize_surface(s),
                        Info {
                            seed,
                            role,
                            index: Some(j),
                        },
                    );
                }
                pools.insert(role, pool);
            }
            facts.push(f);
            candidates.push(pools);
        }
        Self {
            config,
            facts,
            candidates,
            registry,
        }
    }

    pub fn facts(&self, seed: usize) -> &SeedFacts {
        &self.facts[seed]
    }

    pub fn candidates(&self, seed: usize, role: WorldRole) -> &[String] {
        &self.candidates[seed][&role]
    }

    pub fn seed_id(seed: usize) -> String {
        format!("seed-{seed:02}")
    }

    pub fn seeds(&self) -> Vec<Sample> {
        self.facts
            .iter()
            .enumerate()
            .map(|(i, f)| {
                Sample::new(
                    Self::seed_id(i),
                    format!("{QUESTION_PREFIX}{}?", f.band),
                    f.nationality.clone(),
                )
                .with_contexts(vec![
                    Document::new(
                        "d1",
                        f.band.clone(),
                        format!("{}{BAND_SENTENCE}. {SINGER_SENTENCE}{}.", f.band, f.singer),
                    ),
                    Document::new(
                        "d2",
                        f.singer.clone(),
                        format!("{} is a {} singer.", f.singer, f.nationality),
                    ),
                ])
                .with_supporting(vec!["d1".into(), "d2".into()])
            })
            .map(|mut s| {
                s.source_dataset = "world".into();
                s
            })
            .collect()
    }

    fn info(&self, surface: &str) -> Option<Info> {
        self.registry.get(&normalize_surface(surface)).copied()
    }

    fn type_of(&self, surface: &str) -> &'static str {
        self.info(surface)
            .map_or("entity", |i| i.role.semantic_type())
    }

    fn leaks(&self, info: Info) -> bool {
        match info.index {
            None => true,
            Some(j) => {
                let lead = self.config.leak_first.get(info.seed).copied().unwrap_or(0);
                self.config.exhaust.contains(&info.seed) || j % BUCKET < lead
            }
        }
    }

    /// Pure response function over the built-in templates.
    pub fn respond(&self, request: &ChatRequest) -> Option<String> {
        let template = request.tag.as_deref()?.split('@').next()?;
        let user = request.user_prompt.as_str();
        match template {
            "question_graph" => Some(self.question_graph(user)),
            "triplets" => Some(self.triplets(section(user, "Passages:\n", None))),
            "replacement" => self.replacement(user),
            "regeneration" => Some(regeneration(user)),
            "no_context_probe" => Some(self.probe(user)),
            "qa_answer" => {
                let docs = section(user, "Documents:\n", Some("\n\nQuestion: "));
                Some(answer_from(docs, &question_band(user)?).unwrap_or_else(|| "Unknown".into()))
            }
            "entailment" => {
                let context = section(user, "Context:\n", Some("\n\nQuestion: "));
                let proposed = field(user, "Proposed answer: ")?;
                Some(
                    if mentions(context, proposed) {
                        "yes"
                    } else {
                        "no"
                    }
                    .into(),
                )
            }
            _ => None,
        }
    }

    fn question_graph(&self, user: &str) -> String {
        let band = question_band(user).unwrap_or_default();
        let answer = field(user, "Answer: ").unwrap_or_default().to_owned();
        let context = section(user, "Context:\n", None);
        let singer = chain(context)
            .into_iter()
            .find(|(b, _)| b == &band)
            .map(|(_, s)| s);
        let mut nodes = vec![json!({"id": "n0", "surface": band, "type": self.type_of(&band)})];
        let mut edges = Vec::new();
        match singer {
            Some(s) => {
                nodes.push(json!({"id": "n1", "surface": s, "type": self.type_of(&s)}));
                nodes.push(json!({"id": "n2", "surface": answer, "type": self.type_of(&answer)}));
                edges.push(json!({"src": "n0", "rel": "lead_singer", "dst": "n1"}));
                edges.push(json!({"src": "n1", "rel": "nationality", "dst": "n2"}));
            }
            None => {
                nodes.push(json!({"id": "n1", "surface": answer, "type": self.type_of(&answer)}));
                edges.push(json!({"src": "n0", "rel": "nationality", "dst": "n1"}));
            }
        }
        json!({"nodes": nodes, "edges": edges}).to_string()
    }

    fn triplets(&self, context: &str) -> String {
        let replaced = chain(context)
            .iter()
            .any(|(b, _)| self.info(b).is_some_and(|i| i.index.is_some()));
        let mut out = Vec::new();
        for (band, singer) in chain(context) {
            out.push(self.triplet(&band, "has_lead_singer", &singer));
        }
        if !(self.config.drop_edge && replaced) {
            for (singer, nat) in nationalities(context) {
                out.push(self.triplet(&singer, "has_nationality", &nat));
            }
        }
        json!({"triplets": out}).to_string()
    }

    fn triplet(&self, s: &str, rel: &str, o: &str) -> serde_json::Value {
        json!({"subject": s, "subject_type": self.type_of(s), "relation": rel, "object": o, "object_type": self.type_of(o)})
    }

    fn replacement(&self, user: &str) -> Option<String> {
        let entity = field(user, "Entity: ")?;
        let semantic_type = field(user, "Type: ").unwrap_or("entity");
        let avoid: Vec<String> = field(user, "Avoid: ")
            .unwrap_or("")
            .split("; ")
            .map(normalize_surface)
            .collect();
        let nonce = field(user, "Nonce: ").unwrap_or("");
        let info = self.info(entity)?;
        let pool = &self.candidates[info.seed][&info.role];
        let bucket = Sha256::digest(nonce.as_bytes())[0] as usize % (POOL / BUCKET);
        let pick = (0..POOL)
            .map(|j| &pool[(bucket * BUCKET + j) % POOL])
            .find(|c| !avoid.contains(&normalize_surface(c)))?;
        Some(
            json!({"surface": pick, "type": semantic_type, "rationale": "invented name"})
                .to_string(),
        )
    }

    fn probe(&self, user: &str) -> String {
        let Some(band) = question_band(user) else {
            return "Unknown".into();
        };
        match self.info(&band) {
            Some(info) if info.role == WorldRole::Band && self.leaks(info) => match info.index {
                None => self.facts[info.seed].nationality.clone(),
                Some(_) => format!(
                    "It might be one of: {}",
                    self.candidates(info.seed, WorldRole::Nationality)
                        .join(", ")
                ),
            },
            _ => "Unknown".into(),
        }
    }

    pub fn backend(self: &Arc<Self>, id: &str) -> Arc<MockBackend> {
        let world = Arc::clone(self);
        Arc::new(MockBackend::from_fn(id, move |req| world.respond(req)))
    }

    /// Generator and verifier gateways answered by this world.
    pub fn gateways(self: &Arc<Self>) -> Gateways {
        Gateways {
            generator: Gateway::new(
                "generator",
                self.backend("world-generator") as Arc<dyn Backend>,
            ),
            verifier: Gateway::new(
                "verifier",
                self.backend("world-verifier") as Arc<dyn Backend>,
            ),
        }
    }
}

fn field<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(prefix))
        .map(str::trim)
}

fn section<'a>(text: &'a str, start: &str, end: Option<&str>) -> &'a str {
    let Some(i) = text.find(start) else { return "" };
    let rest = &text[i + start.len()..];
    match end.and_then(|e| rest.find(e)) {
        Some(j) => &rest[..j],
        None => rest,
    }
}

fn question_band(text: &str) -> Option<String> {
    let q = field(text, "Question: ")?;
    let rest = q.strip_prefix(QUESTION_PREFIX)?;
    Some(rest.trim_end_matches('?').trim().to_owned())
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .filter(|l| !l.starts_with('['))
        .flat_map(|l| l.split(". "))
        .map(|s| s.trim().trim_end_matches('.').trim())
        .filter(|s| !s.is_empty())
}

/// `(band, lead singer)` pairs in passage order.
fn chain(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut band: Option<&str> = None;
    for s in sentences(text) {
        if let Some(b) = s.strip_suffix(BAND_SENTENCE) {
            band = Some(b);
        } else if let (Some(singer), Some(b)) = (s.strip_prefix(SINGER_SENTENCE), band) {
            out.push((b.to_owned(), singer.to_owned()));
        }
    }
    out
}

/// `(singer, nationality)` pairs from `X is a Y singer`.
fn nationalities(text: &str) -> Vec<(String, String)> {
    sentences(text)
        .filter_map(|s| {
            let body = s.strip_suffix(" singer")?;
            let (who, what) = body.split_once(" is a ")?;
            Some((who.to_owned(), what.to_owned()))
        })
        .collect()
}

fn answer_from(docs: &str, band: &str) -> Option<String> {
    let singer = chain(docs).into_iter().find(|(b, _)| b == band)?.1;
    nationalities(docs)
        .into_iter()
        .find(|(s, _)| *s == singer)
        .map(|(_, n)| n)
}

fn regeneration(user: &str) -> String {
    let facts = section(user, "(subject | relation | object):\n", None);
    let mut paragraphs = Vec::new();
    for line in facts.lines() {
        let parts: Vec<&str> = line.split(" | ").map(str::trim).collect();
        let [s, r, o] = parts[..] else { break };
        paragraphs.push(match r {
            "has_lead_singer" => format!("{s}{BAND_SENTENCE}. {SINGER_SENTENCE}{o}."),
            "has_nationality" => format!("{s} is a {o} singer."),
            other => format!("{s} {} {o}.", other.replace('_', " ")),
        });
    }
    paragraphs.join("\n\n")
}
