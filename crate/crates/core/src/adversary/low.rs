use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PoisedSnapshot;
use crate::model::ProcessId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeTag {
    SameRegister,
    OwnedBy,
    PreviouslyAccessed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub a: ProcessId,
    pub b: ProcessId,
    pub tag: EdgeTag,
}

/// Undirected graph on `L`; one edge per conflicting pair, tagged with the
/// first rule that fired.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictGraph {
    pub vertices: BTreeSet<ProcessId>,
    pub edges: Vec<Edge>,
}

impl ConflictGraph {
    pub fn new(vertices: BTreeSet<ProcessId>) -> Self {
        ConflictGraph {
            vertices,
            edges: Vec::new(),
        }
    }

    pub fn add_edge(&mut self, a: ProcessId, b: ProcessId, tag: EdgeTag) {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.edges.push(Edge { a, b, tag });
    }

    pub fn adjacency(&self) -> BTreeMap<ProcessId, BTreeSet<ProcessId>> {
        let mut adj: BTreeMap<ProcessId, BTreeSet<ProcessId>> =
            self.vertices.iter().map(|v| (*v, BTreeSet::new())).collect();
        for e in &self.edges {
            adj.entry(e.a).or_default().insert(e.b);
            adj.entry(e.b).or_default().insert(e.a);
        }
        adj
    }

    pub fn is_independent(&self, set: &BTreeSet<ProcessId>) -> bool {
        self.edges.iter().all(|e| !(set.contains(&e.a) && set.contains(&e.b)))
    }

    pub fn count_by_tag(&self) -> BTreeMap<EdgeTag, usize> {
        let mut m = BTreeMap::new();
        for e in &self.edges {
            *m.entry(e.tag).or_insert(0) += 1;
        }
        m
    }
}

/// Builds the conflict graph on `l` from a snapshot taken at the end of the
/// setup phase.
pub fn build_conflict_graph(snap: &PoisedSnapshot, l: &BTreeSet<ProcessId>) -> ConflictGraph {
    let mut g = ConflictGraph::new(l.clone());
    let members: Vec<ProcessId> = l.iter().copied().collect();
    let touched_by = |reg, q: ProcessId| snap.touched.get(&reg).is_some_and(|t| t.contains(&q));
    for (i, &p) in members.iter().enumerate() {
        let rp = snap.target(p);
        for &q in &members[i + 1..] {
            let rq = snap.target(q);
            let tag = if rp == rq {
                Some(EdgeTag::SameRegister)
            } else if snap.owners.get(&rp) == Some(&q) || snap.owners.get(&rq) == Some(&p) {
                Some(EdgeTag::OwnedBy)
            } else if touched_by(rp, q) || touched_by(rq, p) {
                Some(EdgeTag::PreviouslyAccessed)
            } else {
                None
            };
            if let Some(tag) = tag {
                g.add_edge(p, q, tag);
            }
        }
    }
    g
}

/// Greedy minimum-degree elimination: take a vertex of least remaining
/// degree, drop its neighbours, repeat. Ties go to the smallest id unless an
/// RNG is supplied.
pub fn independent_set(g: &ConflictGraph, mut rng: Option<&mut ChaCha8Rng>) -> BTreeSet<ProcessId> {
    let mut adj = g.adjacency();
    let mut out = BTreeSet::new();
    while !adj.is_empty() {
        let min = adj.values().map(|n| n.len()).min().unwrap_or(0);
        let ties: Vec<ProcessId> = adj.iter().filter(|(_, n)| n.len() == min).map(|(v, _)| *v).collect();
        let v = match rng.as_deref_mut() {
            Some(r) => ties[r.gen_range(0..ties.len())],
            None => ties[0],
        };
        out.insert(v);
        let mut gone = adj.remove(&v).unwrap_or_default();
        gone.insert(v);
        for u in &gone {
            if let Some(nu) = adj.remove(u) {
                for w in nu {
                    if let Some(nw) = adj.get_mut(&w) {
                        nw.remove(u);
                    }
                }
            }
        }
        for n in adj.values_mut() {
            n.retain(|x| !gone.contains(x));
        }
    }
    out
}
