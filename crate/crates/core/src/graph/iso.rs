//! Structural equivalence of reasoning graphs.
//!
//! Strict mode matches node type labels and edge relation labels; relaxed
//! mode compares the bare directed multigraph. Cheap invariants reject most
//! non-isomorphic pairs before a VF2-style backtracking search.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ReasoningGraph;
use crate::text::normalize_label;

pub const DEFAULT_SIZE_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivalenceMode {
    #[default]
    Strict,
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NodeCount,
    EdgeCount,
    DegreeSequence,
    RelationLabels,
    NodeTypes,
    NoIsomorphism,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    /// Node id in the first graph to node id in the second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<FailureReason>,
}

impl EquivalenceReport {
    fn fail(reason: FailureReason) -> Self {
        Self {
            equivalent: false,
            witness: None,
            failure_reason: Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EquivalenceError {
    #[error("cannot compare a {0:?} with a {1:?}")]
    KindMismatch(crate::model::GraphKind, crate::model::GraphKind),
    #[error("graphs have {0} and {1} nodes, over the search limit of {2}")]
    SizeLimitExceeded(usize, usize, usize),
}

/// Index form of a graph: node labels and, per ordered node pair, the
/// sorted list of edge labels between them.
struct Indexed {
    labels: Vec<String>,
    out_deg: Vec<usize>,
    in_deg: Vec<usize>,
    pair: HashMap<(usize, usize), Vec<String>>,
    neighbours: Vec<Vec<usize>>,
    edge_labels: Vec<String>,
}

impl Indexed {
    fn new(g: &ReasoningGraph, mode: EquivalenceMode) -> Self {
        let n = g.nodes().len();
        let index: HashMap<&str, usize> = g
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.as_str(), i))
            .collect();
        let labels = g
            .nodes()
            .iter()
            .map(|v| match mode {
                EquivalenceMode::Strict => normalize_label(&v.semantic_type),
                EquivalenceMode::Relaxed => String::new(),
            })
            .collect();
        let mut out_deg = vec![0; n];
        let mut in_deg = vec![0; n];
        let mut pair: HashMap<(usize, usize), Vec<String>> = HashMap::new();
        let mut neighbours = vec![Vec::new(); n];
        let mut edge_labels = Vec::new();
        for e in g.edges() {
            let (a, b) = (index[e.src.as_str()], index[e.dst.as_str()]);
            out_deg[a] += 1;
            in_deg[b] += 1;
            let label = match mode {
                EquivalenceMode::Strict => normalize_label(&e.rel),
                EquivalenceMode::Relaxed => String::new(),
            };
            pair.entry((a, b)).or_default().push(label.clone());
            edge_labels.push(label);
            if !neighbours[a].contains(&b) {
                neighbours[a].push(b);
                neighbours[b].push(a);
            }
        }
        for labels in pair.values_mut() {
            labels.sort();
        }
        edge_labels.sort();
        Self {
            labels,
            out_deg,
            in_deg,
            pair,
            neighbours,
            edge_labels,
        }
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn signature(&self, v: usize) -> (usize, usize) {
        (self.in_deg[v], self.out_deg[v])
    }

    fn between(&self, a: usize, b: usize) -> &[String] {
        self.pair.get(&(a, b)).map_or(&[], Vec::as_slice)
    }
}

/// Decides whether `g1` and `g2` are isomorphic under `mode`.
///
/// Errors when the graph kinds differ or when both graphs exceed
/// `size_limit` nodes.
pub fn structurally_equivalent(
    g1: &ReasoningGraph,
    g2: &ReasoningGraph,
    mode: EquivalenceMode,
    size_limit: usize,
) -> Result<EquivalenceReport, EquivalenceError> {
    if g1.kind() != g2.kind() {
        return Err(EquivalenceError::KindMismatch(g1.kind(), g2.kind()));
    }
    let (n1, n2) = (g1.nodes().len(), g2.nodes().len());
    if n1 > size_limit && n2 > size_limit {
        return Err(EquivalenceError::SizeLimitExceeded(n1, n2, size_limit));
    }
    if n1 != n2 {
        return Ok(EquivalenceReport::fail(FailureReason::NodeCount));
    }
    if g1.edges().len() != g2.edges().len() {
        return Ok(EquivalenceReport::fail(FailureReason::EdgeCount));
    }
    let a = Indexed::new(g1, mode);
    let b = Indexed::new(g2, mode);

    let degrees = |g: &Indexed| {
        let mut d: Vec<_> = (0..g.len()).map(|v| g.signature(v)).collect();
        d.sort_unstable();
        d
    };
    if degrees(&a) != degrees(&b) {
        return Ok(EquivalenceReport::fail(FailureReason::DegreeSequence));
    }
    if a.edge_labels != b.edge_labels {
        return Ok(EquivalenceReport::fail(FailureReason::RelationLabels));
    }
    fn histogram(g: &Indexed) -> BTreeMap<(&str, (usize, usize)), usize> {
        let mut h = BTreeMap::new();
        for v in 0..g.len() {
            *h.entry((g.labels[v].as_str(), g.signature(v))).or_default() += 1;
        }
        h
    }
    if histogram(&a) != histogram(&b) {
        let labels = |g: &Indexed| {
            let mut l = g.labels.clone();
            l.sort();
            l
        };
        let reason = if labels(&a) != labels(&b) {
            FailureReason::NodeTypes
        } else {
            FailureReason::NoIsomorphism
        };
        return Ok(EquivalenceReport::fail(reason));
    }

    let order = search_order(&a);
    let mut state = Search {
        a: &a,
        b: &b,
        order: &order,
        core1: vec![None; n1],
        core2: vec![None; n2],
    };
    if state.extend(0) {
        let witness = (0..n1)
            .map(|v| {
                let w = state.core1[v].expect("complete mapping");
                (g1.nodes()[v].id.clone(), g2.nodes()[w].id.clone())
            })
            .collect();
        Ok(EquivalenceReport {
            equivalent: true,
            witness: Some(witness),
            failure_reason: None,
        })
    } else {
        Ok(EquivalenceReport::fail(FailureReason::NoIsomorphism))
    }
}

/// Connected-first ordering: each component is walked breadth-first from its
/// highest-degree node so every later node has a mapped neighbour to prune on.
fn search_order(g: &Indexed) -> Vec<usize> {
    let n = g.len();
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| std::cmp::Reverse(g.in_deg[v] + g.out_deg[v]));
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for root in by_degree {
        if placed[root] {
            continue;
        }
        placed[root] = true;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = g.neighbours[u]
                .iter()
                .copied()
                .filter(|&w| !placed[w])
                .collect();
            next.sort_by_key(|&w| std::cmp::Reverse(g.in_deg[w] + g.out_deg[w]));
            for w in next {
                placed[w] = true;
                queue.push_back(w);
            }
        }
    }
    order
}

struct Search<'g> {
    a: &'g Indexed,
    b: &'g Indexed,
    order: &'g [usize],
    core1: Vec<Option<usize>>,
    core2: Vec<Option<usize>>,
}

impl Search<'_> {
    fn feasible(&self, u: usize, v: usize) -> bool {
        if self.a.labels[u] != self.b.labels[v] || self.a.signature(u) != self.b.signature(v) {
            return false;
        }
        if self.a.between(u, u) != self.b.between(v, v) {
            return false;
        }
        for &u2 in self.order {
            let Some(v2) = self.core1[u2] else { continue };
            if self.a.between(u, u2) != self.b.between(v, v2)
                || self.a.between(u2, u) != self.b.between(v2, v)
            {
                return false;
            }
        }
        true
    }

    fn extend(&mut self, depth: usize) -> bool {
        if depth == self.order.len() {
            return true;
        }
        let u = self.order[depth];
        // Candidates adjacent to an already-mapped neighbour of u when one exists.
        let anchor = self.a.neighbours[u].iter().find_map(|&u2| self.core1[u2]);
        let candidates: Vec<usize> = match anchor {
            Some(v2) => self.b.neighbours[v2].clone(),
            None => (0..self.b.len()).collect(),
        };
        for v in candidates {
            if self.core2[v].is_some() || !self.feasible(u, v) {
                continue;
            }
            self.core1[u] = Some(v);
            self.core2[v] = Some(u);
            if self.extend(depth + 1) {
                return true;
            }
            self.core1[u] = None;
            self.core2[v] = None;
        }
        false
    }
}
