//! Type-constrained entity replacement and its application to samples.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::model::{
    mapping_patterns, Document, Entity, EntityMapping, MappingError, MappingPair, ReasoningGraph,
    Sample, Triplet,
};
use crate::prompts::{PromptError, PromptLibrary, REGENERATION, REPLACEMENT};
use crate::text::{
    find_spans, json_object, mentions, normalize_label, normalize_surface, shape_like,
};

const PROPOSAL_CALLS: usize = 4;
const REGENERATION_CALLS: usize = 3;

pub const DEFAULT_STYLE_HINT: &str =
    "encyclopedic paragraph, one paragraph per connected component";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementProposal {
    pub seed_entity: Entity,
    pub candidate: Entity,
    pub rationale: String,
}

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("no acceptable replacement for `{surface}` after {attempts} proposals (last: {last_reason})")]
    ProposalExhausted {
        surface: String,
        attempts: usize,
        last_reason: String,
    },
    #[error(
        "regenerated context incomplete: missing {missing:?}, seed surfaces present {leaked:?}"
    )]
    RegenerationIncomplete {
        missing: Vec<String>,
        leaked: Vec<String>,
    },
    #[error("nothing to transform: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Replaces every seed surface or alias occurrence in `text` in one pass.
///
/// Matching is case-insensitive and word-bounded, longest match first, then
/// leftmost. Each replacement takes the capitalization shape of the mention
/// it replaces. Output is never rescanned, so `{A -> B, B -> C}` turns
/// `"A B"` into `"B C"`.
pub fn substitute_text(text: &str, mapping: &EntityMapping) -> String {
    substitute_pairs(text, mapping.pairs())
}

/// [`substitute_text`] over raw pairs, without the mapping invariants.
pub fn substitute_pairs(text: &str, pairs: &[MappingPair]) -> String {
    let (patterns, owners) = mapping_patterns(pairs);
    if patterns.is_empty() {
        return text.to_owned();
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for m in find_spans(text, &patterns) {
        out.push_str(&text[last..m.start]);
        let replacement = &pairs[owners[m.pattern]].replacement.surface;
        out.push_str(&shape_like(
            &text[m.start..m.end],
            patterns[m.pattern],
            replacement,
        ));
        last = m.end;
    }
    out.push_str(&text[last..]);
    out
}

/// Applies the mapping to the question, answer, every document title and
/// body, and every choice. Ids and unknown fields are carried over.
pub fn apply_mapping(sample: &Sample, mapping: &EntityMapping) -> Sample {
    let mut out = sample.clone();
    out.question = substitute_text(&sample.question, mapping);
    out.answer = substitute_text(&sample.answer, mapping);
    for doc in &mut out.contexts {
        doc.title = substitute_text(&doc.title, mapping);
        doc.body = substitute_text(&doc.body, mapping);
    }
    if let Some(choices) = &mut out.choices {
        for c in choices.iter_mut() {
            *c = substitute_text(c, mapping);
        }
    }
    out
}

/// Renames the subject and object of each triplet through the mapping.
pub fn map_triplets(triplets: &[Triplet], mapping: &EntityMapping) -> Vec<Triplet> {
    let rename = |e: &Entity| {
        mapping
            .replacement_for(e)
            .cloned()
            .unwrap_or_else(|| e.clone())
    };
    triplets
        .iter()
        .map(|t| Triplet::new(rename(&t.subject), t.relation.clone(), rename(&t.object)))
        .collect()
}

/// Distinct entities by normalized surface, first occurrence wins.
pub fn distinct_entities<'a>(entities: impl IntoIterator<Item = &'a Entity>) -> Vec<Entity> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for e in entities {
        if seen.insert(normalize_surface(&e.surface)) {
            out.push(e.clone());
        } else if !out.iter().any(|o: &Entity| o.key() == e.key()) {
            log::warn!(
                "`{}` ({}) shares a surface with another entity; mapped once",
                e.surface,
                e.semantic_type
            );
        }
    }
    out
}

#[derive(Deserialize)]
struct ProposalWire {
    surface: String,
    #[serde(default, rename = "type")]
    semantic_type: Option<String>,
    #[serde(default)]
    rationale: String,
}

fn check_proposal(
    entity: &Entity,
    output: &str,
    excluded: &HashSet<String>,
) -> Result<ReplacementProposal, String> {
    let value = json_object(output).ok_or("reply was not a JSON object")?;
    let wire: ProposalWire =
        serde_json::from_value(value).map_err(|e| format!("malformed reply: {e}"))?;
    let surface = wire.surface.trim();
    if surface.is_empty() {
        return Err("the surface was empty".into());
    }
    let semantic_type = wire
        .semantic_type
        .unwrap_or_else(|| entity.semantic_type.clone());
    if normalize_label(&semantic_type) != normalize_label(&entity.semantic_type) {
        return Err(format!(
            "type `{semantic_type}` is not `{}`",
            entity.semantic_type
        ));
    }
    let norm = normalize_surface(surface);
    if entity.forms().any(|f| normalize_surface(f) == norm) {
        return Err(format!("`{surface}` is the original entity"));
    }
    if excluded.contains(&norm) {
        return Err(format!("`{surface}` is on the avoid list"));
    }
    Ok(ReplacementProposal {
        seed_entity: entity.clone(),
        candidate: Entity::new(surface, entity.semantic_type.clone()),
        rationale: wire.rationale,
    })
}

/// Proposal and regeneration calls for one sample.
pub struct Transformer<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptLibrary,
    proposal_temperature: f64,
    regeneration_temperature: f64,
    nonce: String,
    attempt: u32,
}

impl<'a> Transformer<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptLibrary) -> Self {
        Self {
            gateway,
            prompts,
            proposal_temperature: 0.8,
            regeneration_temperature: 0.7,
            nonce: String::new(),
            attempt: 1,
        }
    }

    pub fn with_temperatures(mut self, proposal: f64, regeneration: f64) -> Self {
        self.proposal_temperature = proposal;
        self.regeneration_temperature = regeneration;
        self
    }

    /// Per-sample nonce and attempt number, both passed to the proposal prompt.
    pub fn with_attempt(mut self, nonce: impl Into<String>, attempt: u32) -> Self {
        self.nonce = nonce.into();
        self.attempt = attempt;
        self
    }

    /// Asks for a same-type replacement not in `exclusions`, re-prompting
    /// with the rejection reason up to three times.
    pub fn propose_replacement(
        &self,
        entity: &Entity,
        exclusions: &[String],
    ) -> Result<ReplacementProposal, TransformError> {
        let excluded: HashSet<String> = exclusions.iter().map(|e| normalize_surface(e)).collect();
        let avoid = if exclusions.is_empty() {
            "(none)".to_owned()
        } else {
            exclusions.join("; ")
        };
        let attempt = self.attempt.to_string();
        let mut feedback = String::new();
        let mut last_reason = String::new();
        for _ in 0..PROPOSAL_CALLS {
            let prompt = self.prompts.render(
                REPLACEMENT,
                &[
                    ("surface", &entity.surface),
                    ("semantic_type", &entity.semantic_type),
                    ("exclusions", &avoid),
                    ("nonce", &self.nonce),
                    ("attempt", &attempt),
                    ("feedback", &feedback),
                ],
            )?;
            let output = self.gateway.complete(
                &ChatRequest::from_prompt(prompt).with_temperature(self.proposal_temperature),
            )?;
            match check_proposal(entity, &output, &excluded) {
                Ok(p) => return Ok(p),
                Err(reason) => {
                    log::debug!("proposal for `{}` rejected: {reason}", entity.surface);
                    feedback = format!("Your previous proposal was rejected: {reason}. Propose a different entity.");
                    last_reason = reason;
                }
            }
        }
        Err(TransformError::ProposalExhausted {
            surface: entity.surface.clone(),
            attempts: PROPOSAL_CALLS,
            last_reason,
        })
    }

    /// One replacement per distinct entity. Seed surfaces and replacements
    /// already chosen are added to each call's avoid list, so the result is
    /// injective and never reuses a seed name.
    pub fn build_mapping_for(
        &self,
        entities: &[Entity],
        exclusions: &[String],
    ) -> Result<EntityMapping, TransformError> {
        let seeds = distinct_entities(entities);
        if seeds.is_empty() {
            return Err(TransformError::Empty("no entities to map"));
        }
        let mut avoid: Vec<String> = exclusions.to_vec();
        for e in &seeds {
            avoid.extend(e.forms().map(str::to_owned));
        }
        let mut pairs = Vec::with_capacity(seeds.len());
        for seed in &seeds {
            let proposal = self.propose_replacement(seed, &avoid)?;
            avoid.push(proposal.candidate.surface.clone());
            pairs.push(MappingPair {
                seed: seed.clone(),
                replacement: proposal.candidate,
            });
        }
        Ok(EntityMapping::new(pairs, exclusions.to_vec())?)
    }

    pub fn build_mapping(
        &self,
        graph: &ReasoningGraph,
        exclusions: &[String],
    ) -> Result<EntityMapping, TransformError> {
        self.build_mapping_for(&graph.entities(), exclusions)
    }

    /// Writes fresh passages stating `triplets` (already mapped). Every
    /// subject and object surface must appear and no seed surface may.
    pub fn regenerate_context(
        &self,
        triplets: &[Triplet],
        mapping: &EntityMapping,
        style_hint: &str,
    ) -> Result<Vec<Document>, TransformError> {
        if triplets.is_empty() {
            return Err(TransformError::Empty("no triplets to regenerate from"));
        }
        let facts: String = triplets
            .iter()
            .map(|t| {
                format!(
                    "{} | {} | {}\n",
                    t.subject.surface, t.relation, t.object.surface
                )
            })
            .collect();
        let mut required: Vec<&str> = Vec::new();
        for t in triplets {
            for s in [t.subject.surface.as_str(), t.object.surface.as_str()] {
                if !required.contains(&s) {
                    required.push(s);
                }
            }
        }
        let seed_forms: Vec<&str> = mapping
            .pairs()
            .iter()
            .flat_map(|p| p.seed.forms())
            .collect();
        let mut feedback = String::new();
        let (mut missing, mut leaked) = (Vec::new(), Vec::new());
        for _ in 0..REGENERATION_CALLS {
            let prompt = self.prompts.render(
                REGENERATION,
                &[
                    ("style_hint", style_hint),
                    ("triplets", facts.trim_end()),
                    ("feedback", &feedback),
                ],
            )?;
            let text = self.gateway.complete(
                &ChatRequest::from_prompt(prompt).with_temperature(self.regeneration_temperature),
            )?;
            missing = required
                .iter()
                .filter(|s| !mentions(&text, s))
                .map(|s| s.to_string())
                .collect();
            leaked = seed_forms
                .iter()
                .filter(|s| mentions(&text, s))
                .map(|s| s.to_string())
                .collect();
            if missing.is_empty() && leaked.is_empty() && !text.trim().is_empty() {
                return Ok(split_passages(&text));
            }
            let mut notes = Vec::new();
            if !missing.is_empty() {
                notes.push(format!(
                    "mention these names exactly: {}",
                    missing.join("; ")
                ));
            }
            if !leaked.is_empty() {
                notes.push(format!("do not mention: {}", leaked.join("; ")));
            }
            feedback = format!("Your previous passage was rejected; {}.", notes.join("; "));
        }
        Err(TransformError::RegenerationIncomplete { missing, leaked })
    }
}

/// Splits on blank lines into documents `regen-0`, `regen-1`, ...
pub fn split_passages(text: &str) -> Vec<Document> {
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(std::mem::take(&mut current));
            }
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line.trim_end());
        }
    }
    if !current.is_empty() {
        paragraphs.push(current);
    }
    paragraphs
        .into_iter()
        .enumerate()
        .map(|(i, body)| Document::new(format!("regen-{i}"), "", body))
        .collect()
}
