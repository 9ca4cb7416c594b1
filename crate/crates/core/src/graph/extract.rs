//! Gateway-backed extraction of question graphs and context triplets.
//!
//! Both extractors make at most three calls. A reply that does not parse is
//! re-prompted with the parse error as feedback. A disconnected question
//! graph is re-prompted once; a second disconnected graph is an error.

use std::collections::{BTreeSet, HashMap};

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::model::{
    render_documents, Document, Entity, GraphEdge, GraphKind, GraphNode, ReasoningGraph, Sample,
    Triplet,
};
use crate::prompts::{PromptError, PromptLibrary, QUESTION_GRAPH, TRIPLETS};
use crate::text::{json_object, mentions};

const MAX_CALLS: usize = 3;

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("unparseable extraction output after {attempts} calls: {message}")]
    Parse { attempts: usize, message: String },
    #[error("question graph still disconnected after a re-prompt")]
    Disconnected,
    #[error("contexts are empty")]
    NoContext,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Deserialize)]
struct NodeWire {
    id: String,
    surface: String,
    #[serde(rename = "type")]
    semantic_type: String,
    #[serde(default)]
    aliases: Vec<String>,
}

#[derive(Deserialize)]
struct GraphPayload {
    nodes: Vec<NodeWire>,
    #[serde(default)]
    edges: Vec<GraphEdge>,
}

#[derive(Deserialize)]
struct TripletWire {
    subject: String,
    #[serde(default)]
    subject_type: Option<String>,
    #[serde(default)]
    subject_aliases: Vec<String>,
    relation: String,
    object: String,
    #[serde(default)]
    object_type: Option<String>,
    #[serde(default)]
    object_aliases: Vec<String>,
}

#[derive(Deserialize)]
struct TripletPayload {
    triplets: Vec<TripletWire>,
}

/// Parses a `{nodes, edges}` payload. Nodes naming the same entity are
/// merged; self-loops and duplicate edges are dropped.
pub fn parse_question_graph(output: &str) -> Result<ReasoningGraph, String> {
    let value = json_object(output).ok_or("no JSON object in output")?;
    let payload: GraphPayload = serde_json::from_value(value).map_err(|e| e.to_string())?;
    if payload.nodes.is_empty() {
        return Err("graph has no nodes".into());
    }
    let mut canonical: HashMap<String, String> = HashMap::new();
    let mut by_key = HashMap::new();
    let mut nodes: Vec<GraphNode> = Vec::new();
    for n in payload.nodes {
        if n.surface.trim().is_empty() || n.semantic_type.trim().is_empty() {
            return Err(format!("node `{}` lacks a surface or type", n.id));
        }
        if canonical.contains_key(&n.id) {
            return Err(format!("duplicate node id `{}`", n.id));
        }
        let entity = Entity::new(n.surface.trim(), n.semantic_type.trim()).with_aliases(n.aliases);
        match by_key.get(&entity.key()) {
            Some(&idx) => {
                let node: &mut GraphNode = &mut nodes[idx];
                canonical.insert(n.id, node.id.clone());
                node.aliases = node
                    .entity()
                    .with_aliases(entity.forms().map(str::to_owned))
                    .aliases;
            }
            None => {
                by_key.insert(entity.key(), nodes.len());
                canonical.insert(n.id.clone(), n.id.clone());
                nodes.push(GraphNode::new(n.id, &entity));
            }
        }
    }
    let edges = payload
        .edges
        .into_iter()
        .map(|e| {
            let src = canonical
                .get(&e.src)
                .ok_or_else(|| format!("edge endpoint `{}` is not a node", e.src))?;
            let dst = canonical
                .get(&e.dst)
                .ok_or_else(|| format!("edge endpoint `{}` is not a node", e.dst))?;
            Ok(GraphEdge::new(src.clone(), e.rel.trim(), dst.clone()))
        })
        .collect::<Result<Vec<_>, String>>()?;
    ReasoningGraph::normalized(GraphKind::QuestionGraph, nodes, edges).map_err(|e| e.to_string())
}

/// Parses a `{triplets: [...]}` payload and keeps triplets whose subject and
/// object are both mentioned in `source` (by surface or listed alias),
/// dropping self-pairs and duplicates.
pub fn parse_triplets(output: &str, source: &str) -> Result<Vec<Triplet>, String> {
    let value = json_object(output).ok_or("no JSON object in output")?;
    let payload: TripletPayload = serde_json::from_value(value).map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for w in payload.triplets {
        let subject = Entity::new(
            w.subject.trim(),
            w.subject_type.as_deref().unwrap_or("entity").trim(),
        )
        .with_aliases(w.subject_aliases);
        let object = Entity::new(
            w.object.trim(),
            w.object_type.as_deref().unwrap_or("entity").trim(),
        )
        .with_aliases(w.object_aliases);
        if subject.surface.is_empty() || object.surface.is_empty() || w.relation.trim().is_empty() {
            log::warn!(
                "dropping incomplete triplet ({}, {}, {})",
                w.subject,
                w.relation,
                w.object
            );
            continue;
        }
        let present = |e: &Entity| e.forms().any(|f| mentions(source, f));
        if let Some(missing) = [&subject, &object].into_iter().find(|e| !present(e)) {
            log::warn!(
                "dropping triplet: `{}` does not occur in the context",
                missing.surface
            );
            continue;
        }
        let t = Triplet::new(subject, w.relation.trim(), object);
        if t.subject.key() == t.object.key() {
            log::warn!("dropping self-pair triplet on `{}`", t.subject.surface);
            continue;
        }
        if seen.insert(t.key()) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Runs extraction prompts through one gateway.
pub struct Extractor<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptLibrary,
    temperature: f64,
    seed: Option<u64>,
}

impl<'a> Extractor<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptLibrary) -> Self {
        Self {
            gateway,
            prompts,
            temperature: 0.0,
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn call(&self, template: &str, vars: &[(&str, &str)]) -> Result<String, ExtractionError> {
        let mut req = ChatRequest::from_prompt(self.prompts.render(template, vars)?)
            .with_temperature(self.temperature);
        if let Some(seed) = self.seed {
            req = req.with_seed(seed);
        }
        Ok(self.gateway.complete(&req)?)
    }

    /// Question graph `G_q` for a sample. The prompt sees the question, the
    /// answer and the contexts so bridge and answer entities get names.
    pub fn question_graph(&self, sample: &Sample) -> Result<ReasoningGraph, ExtractionError> {
        let context = render_documents(&sample.contexts);
        let mut feedback = String::new();
        let mut disconnected_once = false;
        let mut last_error = String::new();
        for _ in 0..MAX_CALLS {
            let output = self.call(
                QUESTION_GRAPH,
                &[
                    ("question", &sample.question),
                    ("answer", &sample.answer),
                    ("context", &context),
                    ("feedback", &feedback),
                ],
            )?;
            match parse_question_graph(&output) {
                Ok(g) if g.is_connected() => return Ok(g),
                Ok(_) if disconnected_once => return Err(ExtractionError::Disconnected),
                Ok(_) => {
                    disconnected_once = true;
                    feedback = "Your previous graph was disconnected. Return one connected graph linking every node \
                                along the reasoning chain."
                        .into();
                }
                Err(e) => {
                    feedback = format!("Your previous reply could not be parsed ({e}). Return only the JSON object.");
                    last_error = e;
                }
            }
        }
        if disconnected_once && last_error.is_empty() {
            return Err(ExtractionError::Disconnected);
        }
        Err(ExtractionError::Parse {
            attempts: MAX_CALLS,
            message: last_error,
        })
    }

    /// Triplets stated in `contexts`.
    pub fn triplets(&self, contexts: &[Document]) -> Result<Vec<Triplet>, ExtractionError> {
        if contexts.is_empty() {
            return Err(ExtractionError::NoContext);
        }
        let rendered = render_documents(contexts);
        let source: String = contexts
            .iter()
            .map(|d| format!("{}\n{}\n", d.title, d.body))
            .collect();
        let mut feedback = String::new();
        let mut last_error = String::new();
        for _ in 0..MAX_CALLS {
            let output = self.call(TRIPLETS, &[("context", &rendered), ("feedback", &feedback)])?;
            match parse_triplets(&output, &source) {
                Ok(t) => return Ok(t),
                Err(e) => {
                    feedback = format!("Your previous reply could not be parsed ({e}). Return only the JSON object.");
                    last_error = e;
                }
            }
        }
        Err(ExtractionError::Parse {
            attempts: MAX_CALLS,
            message: last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockRule, MockScript};
    use std::sync::Arc;

    const CHAIN: &str = r#"{"nodes": [
        {"id": "n0", "surface": "Hurlingham Reggae Band", "type": "band"},
        {"id": "n1", "surface": "Danny Mills", "type": "person"},
        {"id": "n2", "surface": "Jamaican", "type": "nationality"}],
      "edges": [{"src": "n0", "rel": "has_member", "dst": "n1"}, {"src": "n1", "rel": "has_nationality", "dst": "n2"}]}"#;

    fn gateway(rules: Vec<MockRule>) -> (Arc<MockBackend>, Gateway) {
        let mock = Arc::new(MockBackend::new("m", MockScript::new(rules)));
        (mock.clone(), Gateway::new("m", mock))
    }

    fn sample() -> Sample {
        Sample::new(
            "s1",
            "Lead singer of Hurlingham Reggae Band's nationality?",
            "Jamaican",
        )
        .with_contexts(vec![Document::new(
            "d1",
            "Hurlingham Reggae Band",
            "Danny Mills fronts the band.",
        )])
    }

    #[test]
    fn scripted_graph_is_returned_verbatim() {
        let (_, gw) = gateway(vec![MockRule::reply(format!("```json\n{CHAIN}\n```"))]);
        let lib = PromptLibrary::builtin();
        let g = Extractor::new(&gw, &lib).question_graph(&sample()).unwrap();
        assert_eq!(g, parse_question_graph(CHAIN).unwrap());
        assert_eq!(g.nodes().len(), 3);
        assert_eq!(g.edges()[0].rel, "has_member");
    }

    #[test]
    fn three_malformed_replies_fail() {
        let (mock, gw) = gateway(vec![MockRule::reply("not json")]);
        let lib = PromptLibrary::builtin();
        let err = Extractor::new(&gw, &lib)
            .question_graph(&sample())
            .unwrap_err();
        assert!(matches!(err, ExtractionError::Parse { attempts: 3, .. }));
        assert_eq!(mock.requests().len(), 3);
        assert!(mock.requests()[1]
            .user_prompt
            .contains("could not be parsed"));
    }

    #[test]
    fn malformed_then_valid_recovers() {
        let (_, gw) = gateway(vec![MockRule::sequence(["{oops", CHAIN])]);
        let lib = PromptLibrary::builtin();
        assert!(Extractor::new(&gw, &lib).question_graph(&sample()).is_ok());
    }

    #[test]
    fn disconnected_gets_one_reprompt() {
        let split = r#"{"nodes": [{"id": "a", "surface": "A", "type": "t"}, {"id": "b", "surface": "B", "type": "t"}], "edges": []}"#;
        let (mock, gw) = gateway(vec![MockRule::reply(split)]);
        let lib = PromptLibrary::builtin();
        let err = Extractor::new(&gw, &lib)
            .question_graph(&sample())
            .unwrap_err();
        assert!(matches!(err, ExtractionError::Disconnected));
        assert_eq!(mock.requests().len(), 2);

        let (_, gw) = gateway(vec![MockRule::sequence([split, CHAIN])]);
        assert!(Extractor::new(&gw, &lib).question_graph(&sample()).is_ok());
    }

    #[test]
    fn duplicate_nodes_are_merged() {
        let g = parse_question_graph(
            r#"{"nodes": [{"id": "a", "surface": "Paris", "type": "city"}, {"id": "b", "surface": "paris", "type": "City"},
                          {"id": "c", "surface": "France", "type": "country"}],
               "edges": [{"src": "a", "rel": "in", "dst": "c"}, {"src": "b", "rel": "in", "dst": "c"}]}"#,
        )
        .unwrap();
        assert_eq!(g.nodes().len(), 2);
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn triplets_parse_dedup_and_presence() {
        let text = "A founded B. B is located in C.";
        let docs = vec![Document::new("d1", "", text)];
        let payload = r#"{"triplets": [
            {"subject": "A", "subject_type": "person", "relation": "founded", "object": "B", "object_type": "org"},
            {"subject": "B", "subject_type": "org", "relation": "located_in", "object": "C", "object_type": "city"},
            {"subject": "a", "subject_type": "Person", "relation": "Founded", "object": "b", "object_type": "org"},
            {"subject": "Z", "subject_type": "person", "relation": "founded", "object": "B", "object_type": "org"}]}"#;
        let (_, gw) = gateway(vec![MockRule::reply(payload)]);
        let lib = PromptLibrary::builtin();
        let got = Extractor::new(&gw, &lib).triplets(&docs).unwrap();
        let expect = vec![
            Triplet::new(
                Entity::new("A", "person"),
                "founded",
                Entity::new("B", "org"),
            ),
            Triplet::new(
                Entity::new("B", "org"),
                "located_in",
                Entity::new("C", "city"),
            ),
        ];
        assert_eq!(got, expect);
    }

    #[test]
    fn triplet_alias_counts_as_present() {
        let got = parse_triplets(
            r#"{"triplets": [{"subject": "Robert Smith", "subject_aliases": ["Bob"], "relation": "r", "object": "X"}]}"#,
            "Bob met X.",
        )
        .unwrap();
        assert_eq!(got.len(), 1);
    }
}
