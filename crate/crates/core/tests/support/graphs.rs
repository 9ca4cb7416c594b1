//! Random labelled graphs and an all-permutations isomorphism oracle.

#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use seedforge::graph::EquivalenceMode;
use seedforge::model::{Entity, GraphEdge, GraphKind, GraphNode, ReasoningGraph};

pub const TYPES: [&str; 2] = ["person", "city"];
pub const RELS: [&str; 2] = ["r", "s"];

#[derive(Debug, Clone)]
pub struct Spec {
    pub types: Vec<usize>,
    pub edges: Vec<(usize, usize, usize)>,
}

impl Spec {
    pub fn graph(&self) -> ReasoningGraph {
        let nodes = self
            .types
            .iter()
            .enumerate()
            .map(|(i, &t)| GraphNode::new(format!("v{i}"), &Entity::new(format!("e{i}"), TYPES[t])))
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|&(a, r, b)| GraphEdge::new(format!("v{a}"), RELS[r], format!("v{b}")))
            .collect();
        ReasoningGraph::normalized(GraphKind::ContextGraph, nodes, edges).unwrap()
    }

    /// Same graph with node indices relabelled by `perm`, edges listed in reverse.
    pub fn permuted(&self, perm: &[usize]) -> Spec {
        let mut types = vec![0; self.types.len()];
        for (i, &t) in self.types.iter().enumerate() {
            types[perm[i]] = t;
        }
        let edges = self
            .edges
            .iter()
            .rev()
            .map(|&(a, r, b)| (perm[a], r, perm[b]))
            .collect();
        Spec { types, edges }
    }
}

pub fn spec_strategy(max_nodes: usize) -> impl Strategy<Value = Spec> {
    (1..=max_nodes).prop_flat_map(|n| {
        let types = prop::collection::vec(0..TYPES.len(), n);
        let edges = prop::collection::vec((0..n, 0..RELS.len(), 0..n), 0..=(n * 2));
        (types, edges).prop_map(|(types, edges)| {
            let mut seen = std::collections::BTreeSet::new();
            let edges = edges
                .into_iter()
                .filter(|&(a, _, b)| a != b)
                .filter(|e| seen.insert(*e))
                .collect();
            Spec { types, edges }
        })
    })
}

/// Multiset of edges under a node relabelling.
pub fn edge_bag(
    g: &ReasoningGraph,
    map: &BTreeMap<String, usize>,
    labelled: bool,
) -> BTreeMap<(usize, String, usize), usize> {
    let mut bag = BTreeMap::new();
    for e in g.edges() {
        let rel = if labelled {
            e.rel.clone()
        } else {
            String::new()
        };
        *bag.entry((map[&e.src], rel, map[&e.dst])).or_insert(0) += 1;
    }
    bag
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Tries every bijection between the node sets.
pub fn oracle(g1: &ReasoningGraph, g2: &ReasoningGraph, mode: EquivalenceMode) -> bool {
    let n = g1.nodes().len();
    if n != g2.nodes().len() || g1.edges().len() != g2.edges().len() {
        return false;
    }
    let labelled = mode == EquivalenceMode::Strict;
    let id2: BTreeMap<String, usize> = g2
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id.clone(), i))
        .collect();
    let target = edge_bag(g2, &id2, labelled);
    permutations(n).into_iter().any(|p| {
        if labelled && (0..n).any(|i| g1.nodes()[i].semantic_type != g2.nodes()[p[i]].semantic_type)
        {
            return false;
        }
        let id1: BTreeMap<String, usize> = g1
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.clone(), p[i]))
            .collect();
        edge_bag(g1, &id1, labelled) == target
    })
}

pub fn witness_is_valid(
    g1: &ReasoningGraph,
    g2: &ReasoningGraph,
    witness: &[(String, String)],
    mode: EquivalenceMode,
) -> bool {
    let labelled = mode == EquivalenceMode::Strict;
    let id2: BTreeMap<String, usize> = g2
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id.clone(), i))
        .collect();
    let mapped: BTreeMap<String, usize> =
        witness.iter().map(|(a, b)| (a.clone(), id2[b])).collect();
    let types_ok = !labelled
        || witness
            .iter()
            .all(|(a, b)| g1.node(a).unwrap().semantic_type == g2.node(b).unwrap().semantic_type);
    types_ok && edge_bag(g1, &mapped, labelled) == edge_bag(g2, &id2, labelled)
}

pub fn small_pair() -> impl Strategy<Value = (Spec, Spec)> {
    spec_strategy(8).prop_flat_map(|a| {
        let n = a.types.len();
        let perm = Just((0..n).collect::<Vec<_>>()).prop_shuffle();
        let other = spec_strategy(8);
        (Just(a), perm, other, any::<bool>(), any::<bool>()).prop_map(
            |(a, perm, other, same, mutate)| {
                let mut b = if same { a.permuted(&perm) } else { other };
                if mutate && !b.edges.is_empty() {
                    let (x, r, y) = b.edges[0];
                    b.edges[0] = (y, r, x);
                    let mut seen = std::collections::BTreeSet::new();
                    b.edges.retain(|e| seen.insert(*e));
                }
                (a, b)
            },
        )
    })
}
