//! Shared data model: samples, entities, reasoning graphs, entity mappings
//! and evaluation records.
//!
//! Every type here is an immutable value once constructed. Types with
//! invariants validate on construction and on deserialization.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::{self, normalize_label, normalize_surface};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        body: impl Into<String>,
    ) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            body: body.into(),
        }
    }
}

/// Renders documents as numbered `[n] title` blocks for prompts.
pub fn render_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    let mut out = String::new();
    for (i, d) in docs.into_iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!(
            "[{}] {}\n{}",
            i + 1,
            d.title.trim(),
            d.body.trim()
        ));
    }
    out
}

fn default_source() -> String {
    "custom".to_owned()
}

/// One QA record. Unknown JSON fields are kept in `extra` and written back out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub contexts: Vec<Document>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supporting_ids: Option<Vec<String>>,
    #[serde(default = "default_source")]
    pub source_dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, Value>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            answer: answer.into(),
            contexts: Vec::new(),
            supporting_ids: None,
            source_dataset: default_source(),
            choices: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn with_contexts(mut self, contexts: Vec<Document>) -> Self {
        self.contexts = contexts;
        self
    }

    pub fn with_supporting(mut self, ids: Vec<String>) -> Self {
        self.supporting_ids = Some(ids);
        self
    }

    pub fn with_choices(mut self, choices: Vec<String>) -> Self {
        self.choices = Some(choices);
        self
    }

    /// The gold documents: the supporting subset when marked, else every context.
    pub fn gold_documents(&self) -> Result<Vec<&Document>, String> {
        match &self.supporting_ids {
            None => Ok(self.contexts.iter().collect()),
            Some(ids) => ids
                .iter()
                .map(|id| {
                    self.contexts
                        .iter()
                        .find(|d| &d.doc_id == id)
                        .ok_or_else(|| format!("supporting id `{id}` has no document"))
                })
                .collect(),
        }
    }

    pub fn choices(&self) -> &[String] {
        self.choices.as_deref().unwrap_or(&[])
    }
}

/// A broken [`Sample`] invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

/// Lists every invariant `sample` breaks. An empty list means the sample is valid.
pub fn validate_sample(sample: &Sample) -> Vec<Violation> {
    let mut out = Vec::new();
    if sample.id.trim().is_empty() {
        out.push(Violation::new("id", "id is empty"));
    }
    if sample.question.trim().is_empty() {
        out.push(Violation::new("question", "question is empty"));
    }
    if sample.answer.trim().is_empty() {
        out.push(Violation::new("answer", "answer is empty"));
    }
    let mut seen = HashSet::new();
    for doc in &sample.contexts {
        if !seen.insert(doc.doc_id.as_str()) {
            out.push(Violation::new(
                "contexts",
                format!("duplicate doc_id `{}`", doc.doc_id),
            ));
        }
    }
    if let Some(ids) = &sample.supporting_ids {
        for id in ids {
            if !seen.contains(id.as_str()) {
                out.push(Violation::new(
                    "supporting_ids",
                    format!("dangling supporting_id `{id}`"),
                ));
            }
        }
    }
    if let Some(choices) = &sample.choices {
        let answer = text::normalize_answer(&sample.answer);
        let hits = choices
            .iter()
            .filter(|c| text::normalize_answer(c) == answer)
            .count();
        if hits != 1 {
            out.push(Violation::new(
                "choices",
                format!("answer must equal exactly one choice, found {hits}"),
            ));
        }
    }
    out
}

/// Identity of an entity: normalized surface plus normalized type label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityKey {
    pub surface: String,
    pub semantic_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub semantic_type: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl Entity {
    pub fn new(surface: impl Into<String>, semantic_type: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            semantic_type: semantic_type.into(),
            aliases: Vec::new(),
        }
    }

    /// Attaches aliases, dropping blanks and anything equal to the surface.
    pub fn with_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let own = normalize_surface(&self.surface);
        for alias in aliases {
            let alias = alias.into();
            let norm = normalize_surface(&alias);
            if norm.is_empty() || norm == own {
                continue;
            }
            if !self.aliases.iter().any(|a| normalize_surface(a) == norm) {
                self.aliases.push(alias);
            }
        }
        self
    }

    pub fn key(&self) -> EntityKey {
        EntityKey {
            surface: normalize_surface(&self.surface),
            semantic_type: normalize_label(&self.semantic_type),
        }
    }

    /// Surface followed by aliases.
    pub fn forms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.surface.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: Entity,
    pub relation: String,
    pub object: Entity,
}

impl Triplet {
    pub fn new(subject: Entity, relation: impl Into<String>, object: Entity) -> Self {
        Self {
            subject,
            relation: relation.into(),
            object,
        }
    }

    /// Dedup key: subject identity, normalized relation, object identity.
    pub fn key(&self) -> (EntityKey, String, EntityKey) {
        (
            self.subject.key(),
            normalize_label(&self.relation),
            self.object.key(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    QuestionGraph,
    ContextGraph,
}

/// Node in the graph exchange format: `{id, surface, type}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub surface: String,
    #[serde(rename = "type")]
    pub semantic_type: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl GraphNode {
    pub fn new(id: impl Into<String>, entity: &Entity) -> Self {
        Self {
            id: id.into(),
            surface: entity.surface.clone(),
            semantic_type: entity.semantic_type.clone(),
            aliases: entity.aliases.clone(),
        }
    }

    pub fn entity(&self) -> Entity {
        Entity {
            surface: self.surface.clone(),
            semantic_type: self.semantic_type.clone(),
            aliases: self.aliases.clone(),
        }
    }
}

/// Edge in the graph exchange format: `{src, rel, dst}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: String,
    pub rel: String,
    pub dst: String,
}

impl GraphEdge {
    pub fn new(src: impl Into<String>, rel: impl Into<String>, dst: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            rel: rel.into(),
            dst: dst.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("edge endpoint `{0}` is not a node")]
    DanglingEdge(String),
    #[error("self-loop on node `{0}`")]
    SelfLoop(String),
    #[error("duplicate edge {0} -[{1}]-> {2}")]
    DuplicateEdge(String, String, String),
    #[error("node `{0}` has an empty surface or type")]
    EmptyNode(String),
}

#[derive(Deserialize)]
struct GraphWire {
    kind: GraphKind,
    #[serde(default)]
    nodes: Vec<GraphNode>,
    #[serde(default)]
    edges: Vec<GraphEdge>,
}

impl TryFrom<GraphWire> for ReasoningGraph {
    type Error = GraphError;

    fn try_from(wire: GraphWire) -> Result<Self, Self::Error> {
        ReasoningGraph::new(wire.kind, wire.nodes, wire.edges)
    }
}

/// Typed-node, labeled-edge graph for a question's reasoning chain or a
/// context's fact structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphWire")]
pub struct ReasoningGraph {
    kind: GraphKind,
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
}

impl ReasoningGraph {
    /// Builds a graph, rejecting anything that breaks an invariant.
    pub fn new(
        kind: GraphKind,
        nodes: Vec<GraphNode>,
        edges: Vec<GraphEdge>,
    ) -> Result<Self, GraphError> {
        Self::check_nodes(&nodes)?;
        let ids: HashSet<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
        let mut seen = HashSet::new();
        for e in &edges {
            for end in [&e.src, &e.dst] {
                if !ids.contains(end.as_str()) {
                    return Err(GraphError::DanglingEdge(end.clone()));
                }
            }
            if e.src == e.dst {
                return Err(GraphError::SelfLoop(e.src.clone()));
            }
            if !seen.insert(e) {
                return Err(GraphError::DuplicateEdge(
                    e.src.clone(),
                    e.rel.clone(),
                    e.dst.clone(),
                ));
            }
        }
        Ok(Self { kind, nodes, edges })
    }

    /// Like [`ReasoningGraph::new`] but silently drops self-loops and exact
    /// duplicate edges, which extraction output routinely contains.
    pub fn normalized(
        kind: GraphKind,
        nodes: Vec<GraphNode>,
        edges: Vec<GraphEdge>,
    ) -> Result<Self, GraphError> {
        let mut seen = HashSet::new();
        let edges = edges
            .into_iter()
            .filter(|e| {
                if e.src == e.dst {
                    log::debug!("dropping self-loop on `{}`", e.src);
                    return false;
                }
                seen.insert(e.clone())
            })
            .collect();
        Self::new(kind, nodes, edges)
    }

    fn check_nodes(nodes: &[GraphNode]) -> Result<(), GraphError> {
        let mut ids = HashSet::new();
        for n in nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
            if n.surface.trim().is_empty() || n.semantic_type.trim().is_empty() {
                return Err(GraphError::EmptyNode(n.id.clone()));
            }
        }
        Ok(())
    }

    pub fn empty(kind: GraphKind) -> Self {
        Self {
            kind,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn entities(&self) -> Vec<Entity> {
        self.nodes.iter().map(GraphNode::entity).collect()
    }

    /// Weak connectivity. The empty graph counts as connected.
    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let index: BTreeMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (a, b) = (index[e.src.as_str()], index[e.dst.as_str()]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Replaces every node entity covered by `mapping` with its replacement.
    pub fn renamed(&self, mapping: &EntityMapping) -> ReasoningGraph {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match mapping.replacement_for(&n.entity()) {
                Some(r) => GraphNode::new(n.id.clone(), r),
                None => n.clone(),
            })
            .collect();
        Self {
            kind: self.kind,
            nodes,
            edges: self.edges.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPair {
    pub seed: Entity,
    pub replacement: Entity,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("type mismatch: `{seed}` ({seed_type}) -> `{replacement}` ({replacement_type})")]
    TypeMismatch {
        seed: String,
        seed_type: String,
        replacement: String,
        replacement_type: String,
    },
    #[error("two seeds map to replacement surface `{0}`")]
    NotInjective(String),
    #[error("seed surface `{0}` appears in more than one pair")]
    DuplicateSeed(String),
    #[error("replacement `{0}` equals a seed surface")]
    ReplacementIsSeed(String),
    #[error("replacement `{0}` is excluded")]
    Excluded(String),
    #[error("empty surface in mapping")]
    EmptySurface,
}

#[derive(Deserialize)]
struct MappingWire {
    #[serde(default)]
    pairs: Vec<MappingPair>,
    #[serde(default)]
    exclusions: Vec<String>,
}

impl TryFrom<MappingWire> for EntityMapping {
    type Error = MappingError;

    fn try_from(wire: MappingWire) -> Result<Self, Self::Error> {
        EntityMapping::new(wire.pairs, wire.exclusions)
    }
}

/// The seed-to-replacement entity bijection.
///
/// Seed surfaces are unique (case-insensitively) so the induced surface map
/// is a function, replacement surfaces are unique so it is injective, and
/// every pair keeps its semantic type.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "MappingWire")]
pub struct EntityMapping {
    pairs: Vec<MappingPair>,
    exclusions: Vec<String>,
}

impl EntityMapping {
    pub fn new(pairs: Vec<MappingPair>, exclusions: Vec<String>) -> Result<Self, MappingError> {
        let seeds: HashSet<String> = pairs
            .iter()
            .map(|p| normalize_surface(&p.seed.surface))
            .collect();
        let excluded: HashSet<String> = exclusions.iter().map(|e| normalize_surface(e)).collect();
        if seeds.len() != pairs.len() {
            let mut seen = HashSet::new();
            let dup = pairs
                .iter()
                .find(|p| !seen.insert(normalize_surface(&p.seed.surface)))
                .map(|p| p.seed.surface.clone())
                .unwrap_or_default();
            return Err(MappingError::DuplicateSeed(dup));
        }
        let mut replacements = HashSet::new();
        for p in &pairs {
            let (seed, repl) = (&p.seed, &p.replacement);
            let repl_norm = normalize_surface(&repl.surface);
            if seeds.contains("") || repl_norm.is_empty() {
                return Err(MappingError::EmptySurface);
            }
            if normalize_label(&seed.semantic_type) != normalize_label(&repl.semantic_type) {
                return Err(MappingError::TypeMismatch {
                    seed: seed.surface.clone(),
                    seed_type: seed.semantic_type.clone(),
                    replacement: repl.surface.clone(),
                    replacement_type: repl.semantic_type.clone(),
                });
            }
            if seeds.contains(&repl_norm) {
                return Err(MappingError::ReplacementIsSeed(repl.surface.clone()));
            }
            if excluded.contains(&repl_norm) {
                return Err(MappingError::Excluded(repl.surface.clone()));
            }
            if !replacements.insert(repl_norm) {
                return Err(MappingError::NotInjective(repl.surface.clone()));
            }
        }
        Ok(Self { pairs, exclusions })
    }

    pub fn pairs(&self) -> &[MappingPair] {
        &self.pairs
    }

    pub fn exclusions(&self) -> &[String] {
        &self.exclusions
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn replacement_surfaces(&self) -> Vec<String> {
        self.pairs
            .iter()
            .map(|p| p.replacement.surface.clone())
            .collect()
    }

    pub fn seed_surfaces(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.seed.surface.clone()).collect()
    }

    /// Replacement for an entity, matched by identity first and then by
    /// surface or alias (types are equal within a pair, so a surface hit is
    /// unambiguous).
    pub fn replacement_for(&self, entity: &Entity) -> Option<&Entity> {
        let key = entity.key();
        if let Some(p) = self.pairs.iter().find(|p| p.seed.key() == key) {
            return Some(&p.replacement);
        }
        let surface = normalize_surface(&entity.surface);
        self.pairs
            .iter()
            .find(|p| p.seed.forms().any(|f| normalize_surface(f) == surface))
            .map(|p| &p.replacement)
    }

    /// Swaps seeds and replacements. Always valid for a valid mapping.
    pub fn inverse(&self) -> EntityMapping {
        let pairs = self
            .pairs
            .iter()
            .map(|p| MappingPair {
                seed: p.replacement.clone(),
                replacement: p.seed.clone(),
            })
            .collect();
        EntityMapping {
            pairs,
            exclusions: Vec::new(),
        }
    }
}

/// Which piece of a sample an occurrence lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Question,
    Answer,
    DocTitle(usize),
    DocBody(usize),
    Choice(usize),
}

/// One located mention of a seed entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occurrence {
    pub role: Role,
    pub start: usize,
    pub end: usize,
    /// Index into [`EntityMapping::pairs`].
    pub pair: usize,
}

/// The texts a mapping is applied to.
#[derive(Debug, Clone, Copy)]
pub struct TextRoles<'a> {
    pub question: &'a str,
    pub answer: &'a str,
    pub contexts: &'a [Document],
    pub choices: &'a [String],
}

impl<'a> TextRoles<'a> {
    pub fn of(sample: &'a Sample) -> Self {
        Self {
            question: &sample.question,
            answer: &sample.answer,
            contexts: &sample.contexts,
            choices: sample.choices(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Role, &'a str)> + '_ {
        let docs = self.contexts.iter().enumerate().flat_map(|(i, d)| {
            [
                (Role::DocTitle(i), d.title.as_str()),
                (Role::DocBody(i), d.body.as_str()),
            ]
        });
        let choices = self
            .choices
            .iter()
            .enumerate()
            .map(|(i, c)| (Role::Choice(i), c.as_str()));
        [(Role::Question, self.question), (Role::Answer, self.answer)]
            .into_iter()
            .chain(docs)
            .chain(choices)
    }
}

/// Role-tagged index of every seed-entity occurrence, ordered by role then offset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OccurrenceIndex {
    pub occurrences: Vec<Occurrence>,
}

impl OccurrenceIndex {
    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    pub fn in_role(&self, role: Role) -> impl Iterator<Item = &Occurrence> {
        self.occurrences.iter().filter(move |o| o.role == role)
    }
}

/// Surface forms of every pair, tagged with the pair index.
pub(crate) fn mapping_patterns(pairs: &[MappingPair]) -> (Vec<&str>, Vec<usize>) {
    let mut patterns = Vec::new();
    let mut owners = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        for form in p.seed.forms() {
            if !form.trim().is_empty() {
                patterns.push(form);
                owners.push(i);
            }
        }
    }
    (patterns, owners)
}

/// Locates every occurrence of every seed surface or alias in each role.
/// Overlaps resolve longest-match-first, leftmost-first.
pub fn mapping_compose(roles: TextRoles<'_>, mapping: &EntityMapping) -> OccurrenceIndex {
    let (patterns, owners) = mapping_patterns(mapping.pairs());
    if patterns.is_empty() {
        return OccurrenceIndex::default();
    }
    let occurrences = roles
        .iter()
        .flat_map(|(role, text)| {
            text::find_spans(text, &patterns)
                .into_iter()
                .map(move |m| (role, m))
        })
        .map(|(role, m)| Occurrence {
            role,
            start: m.start,
            end: m.end,
            pair: owners[m.pattern],
        })
        .collect();
    OccurrenceIndex { occurrences }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContextPath {
    #[default]
    SurfaceSubstitution,
    TripletRegeneration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphPair {
    pub question: ReasoningGraph,
    pub context: ReasoningGraph,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub attempts: u32,
    pub generator: String,
    pub verifier: String,
    pub run_seed: u64,
    pub timestamp: String,
}

/// A transformed sample with the mapping and graphs that justify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSample {
    pub seed_id: String,
    pub sample: Sample,
    pub mapping: EntityMapping,
    pub context_path: ContextPath,
    /// Graphs extracted from the transformed sample.
    pub graphs: GraphPair,
    /// Graphs extracted from the seed, kept for offline re-verification.
    pub seed_graphs: GraphPair,
    pub provenance: Provenance,
}

/// Evaluation condition of a record. Serialized as `{"kind": ..., "name": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum ConditionTag {
    NoContext,
    Gold,
    Retriever(String),
}

impl std::fmt::Display for ConditionTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConditionTag::NoContext => f.write_str("no_context"),
            ConditionTag::Gold => f.write_str("gold"),
            ConditionTag::Retriever(name) => write!(f, "retriever:{name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityClassKind {
    Leak,
    FactualInconsistency,
    NonLeaking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub condition: ConditionTag,
    pub model_response: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_class: Option<QualityClassKind>,
    /// Set when the gateway failed; such records are left out of accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn is_errored(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    pub dataset_id: String,
    pub model_id: String,
    pub acc_no_ctx: f64,
    pub acc_gold: f64,
    pub leakage_error: f64,
    pub answerability_accuracy: f64,
    pub n_questions: usize,
}

impl BenchmarkMetrics {
    /// Derives both validity metrics from the two condition accuracies.
    pub fn from_accuracies(
        dataset_id: impl Into<String>,
        model_id: impl Into<String>,
        acc_no_ctx: f64,
        acc_gold: f64,
        n_questions: usize,
    ) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            model_id: model_id.into(),
            acc_no_ctx,
            acc_gold,
            leakage_error: acc_no_ctx,
            answerability_accuracy: acc_gold - acc_no_ctx,
            n_questions,
        }
    }
}
