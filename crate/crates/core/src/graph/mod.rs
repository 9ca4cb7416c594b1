//! Reasoning-graph construction, statistics, equivalence and perturbation.

mod extract;
mod iso;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{EntityKey, GraphEdge, GraphKind, GraphNode, ReasoningGraph, Triplet};

pub use extract::{parse_question_graph, parse_triplets, ExtractionError, Extractor};
pub use iso::{
    structurally_equivalent, EquivalenceError, EquivalenceMode, EquivalenceReport, FailureReason,
    DEFAULT_SIZE_LIMIT,
};

/// Plain size statistics. Edges are counted as a simple undirected graph:
/// parallel edges and opposite directions between one node pair count once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub density: f64,
    pub avg_degree: f64,
}

pub fn graph_stats(g: &ReasoningGraph) -> GraphStats {
    let pairs: BTreeSet<(&str, &str)> = g
        .edges()
        .iter()
        .map(|e| {
            if e.src <= e.dst {
                (e.src.as_str(), e.dst.as_str())
            } else {
                (e.dst.as_str(), e.src.as_str())
            }
        })
        .collect();
    let n = g.nodes().len();
    let m = pairs.len();
    let density = if n >= 2 {
        2.0 * m as f64 / (n * (n - 1)) as f64
    } else {
        0.0
    };
    let avg_degree = if n >= 1 {
        2.0 * m as f64 / n as f64
    } else {
        0.0
    };
    GraphStats {
        n_nodes: n,
        n_edges: m,
        density,
        avg_degree,
    }
}

/// Context graph over the distinct entities of `triplets`, in order of first
/// appearance, with one edge per distinct triplet. Self-pairs are dropped.
pub fn build_context_graph(triplets: &[Triplet]) -> ReasoningGraph {
    let mut ids: HashMap<EntityKey, usize> = HashMap::new();
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for t in triplets {
        if t.subject.key() == t.object.key() {
            log::warn!("dropping self-pair triplet on `{}`", t.subject.surface);
            continue;
        }
        if !seen.insert(t.key()) {
            continue;
        }
        let mut endpoint = |e: &crate::model::Entity| -> String {
            let idx = *ids.entry(e.key()).or_insert_with(|| {
                nodes.push(GraphNode::new(format!("n{}", nodes.len()), e));
                nodes.len() - 1
            });
            let node = &mut nodes[idx];
            let merged = node.entity().with_aliases(e.forms().map(str::to_owned));
            node.aliases = merged.aliases;
            node.id.clone()
        };
        let src = endpoint(&t.subject);
        let dst = endpoint(&t.object);
        edges.push(GraphEdge::new(src, t.relation.clone(), dst));
    }
    ReasoningGraph::normalized(GraphKind::ContextGraph, nodes, edges)
        .expect("context graph built from valid triplets")
}

/// Result of [`cyclic_perturbation`]; `repaired` lists the triplet indices
/// whose object was shifted further to avoid a self-pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub triplets: Vec<Triplet>,
    pub repaired: Vec<usize>,
}

/// Rewires edges while keeping the entities: triplet `i` keeps its subject
/// and relation and takes the object of triplet `(i + k) mod n`. When that
/// object is the subject itself, the shift advances one more position until
/// it is not (a triplet with no valid object is left unchanged).
pub fn cyclic_perturbation(triplets: &[Triplet], shift: usize) -> Perturbation {
    let n = triplets.len();
    if n <= 1 || shift.is_multiple_of(n) {
        return Perturbation {
            triplets: triplets.to_vec(),
            repaired: Vec::new(),
        };
    }
    let mut repaired = Vec::new();
    let out = triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let subject = t.subject.key();
            let base = (i + shift) % n;
            let pick = (0..n)
                .map(|extra| (base + extra) % n)
                .find(|&j| triplets[j].object.key() != subject);
            match pick {
                Some(j) => {
                    if j != base {
                        log::info!(
                            "perturbation: triplet {i} shifted to object {j} to avoid a self-pair"
                        );
                        repaired.push(i);
                    }
                    Triplet::new(
                        t.subject.clone(),
                        t.relation.clone(),
                        triplets[j].object.clone(),
                    )
                }
                None => {
                    log::warn!("perturbation: triplet {i} has no non-self object; left unchanged");
                    repaired.push(i);
                    t.clone()
                }
            }
        })
        .collect();
    Perturbation {
        triplets: out,
        repaired,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Entity;

    fn e(s: &str) -> Entity {
        Entity::new(s, "thing")
    }

    fn t(s: &str, r: &str, o: &str) -> Triplet {
        Triplet::new(e(s), r, e(o))
    }

    fn path(n: usize) -> ReasoningGraph {
        let triplets: Vec<_> = (0..n - 1)
            .map(|i| t(&format!("v{i}"), "next", &format!("v{}", i + 1)))
            .collect();
        build_context_graph(&triplets)
    }

    #[test]
    fn stats_triangle_path_single() {
        let tri = build_context_graph(&[t("a", "r", "b"), t("b", "r", "c"), t("c", "r", "a")]);
        let s = graph_stats(&tri);
        assert_eq!((s.n_nodes, s.n_edges), (3, 3));
        assert_eq!(s.density, 1.0);
        assert_eq!(s.avg_degree, 2.0);

        let s = graph_stats(&path(4));
        assert_eq!(s.density, 0.5);
        assert_eq!(s.avg_degree, 1.5);

        let single = ReasoningGraph::new(
            GraphKind::ContextGraph,
            vec![GraphNode::new("n0", &e("a"))],
            vec![],
        )
        .unwrap();
        let s = graph_stats(&single);
        assert_eq!((s.density, s.avg_degree), (0.0, 0.0));
        let s = graph_stats(&ReasoningGraph::empty(GraphKind::ContextGraph));
        assert_eq!((s.n_nodes, s.density, s.avg_degree), (0, 0.0, 0.0));
    }

    #[test]
    fn stats_collapse_parallel_and_reverse_edges() {
        let g = build_context_graph(&[t("a", "r1", "b"), t("a", "r2", "b"), t("b", "r3", "a")]);
        assert_eq!(g.edges().len(), 3);
        let s = graph_stats(&g);
        assert_eq!(s.n_edges, 1);
        assert_eq!(s.density, 1.0);
    }

    #[test]
    fn context_graph_construction() {
        let g = build_context_graph(&[t("A", "r1", "B"), t("B", "r2", "C")]);
        assert_eq!((g.nodes().len(), g.edges().len()), (3, 2));
        assert_eq!(g.nodes()[0].id, "n0");
        assert_eq!(g.nodes()[2].surface, "C");
        assert!(build_context_graph(&[]).nodes().is_empty());
        assert_eq!(
            build_context_graph(&[t("A", "r", "B"), t("a", "R", "b")])
                .edges()
                .len(),
            1
        );
        assert_eq!(build_context_graph(&[t("A", "r", "a")]).edges().len(), 0);
    }

    #[test]
    fn same_surface_different_type_are_distinct_nodes() {
        let g = build_context_graph(&[Triplet::new(
            Entity::new("Paris", "city"),
            "r",
            Entity::new("Paris", "person"),
        )]);
        assert_eq!(g.nodes().len(), 2);
    }

    #[test]
    fn perturbation_examples() {
        let input = vec![t("a", "r1", "b"), t("c", "r2", "d")];
        assert_eq!(cyclic_perturbation(&input, 0).triplets, input);
        assert_eq!(cyclic_perturbation(&input, 2).triplets, input);
        let p = cyclic_perturbation(&input, 1);
        assert_eq!(p.triplets, vec![t("a", "r1", "d"), t("c", "r2", "b")]);
        assert!(p.repaired.is_empty());
    }

    #[test]
    fn perturbation_repairs_self_pairs() {
        let chain = vec![
            t("band", "has_member", "singer"),
            t("singer", "has_nationality", "nationality"),
        ];
        let p = cyclic_perturbation(&chain, 1);
        assert_eq!(
            p.triplets,
            vec![
                t("band", "has_member", "nationality"),
                t("singer", "has_nationality", "nationality")
            ]
        );
        assert_eq!(p.repaired, vec![1]);
    }
}
