//! Projection of unconstrained edge probabilities onto spanning trees.
//!
//! The projection runs Kruskal's algorithm over the complete graph on the
//! node set, using each pair's non-existence probability `y⁻` as its cost,
//! so the tree prefers pairs the generator believes in most.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeDelta, EdgeSet};
use crate::pairs::{pair_count, pair_index, pairs};
use crate::union_find::UnionFind;

/// Tolerance on `y⁺ + y⁻ = 1`.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Existence / non-existence probabilities of one node pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeProb {
    pub pos: f64,
    pub neg: f64,
}

impl EdgeProb {
    pub fn from_pos(pos: f64) -> Self {
        EdgeProb {
            pos,
            neg: 1.0 - pos,
        }
    }
}

/// Per-pair probabilities for every `i < j` pair of `n` nodes, stored in
/// lexicographic pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbabilities {
    n: usize,
    probs: Vec<EdgeProb>,
}

impl EdgeProbabilities {
    pub fn new(n: usize, probs: Vec<EdgeProb>) -> Result<Self> {
        if probs.len() != pair_count(n) {
            return Err(Error::invalid(format!(
                "{} pair entries for {n} nodes, expected {}",
                probs.len(),
                pair_count(n)
            )));
        }
        for (e, p) in pairs(n).zip(&probs) {
            check_prob(&e.to_string(), p)?;
        }
        Ok(EdgeProbabilities { n, probs })
    }

    /// Builds probabilities from existence values alone (`y⁻ = 1 − y⁺`).
    pub fn from_existence(n: usize, pos: &[f64]) -> Result<Self> {
        EdgeProbabilities::new(n, pos.iter().map(|&p| EdgeProb::from_pos(p)).collect())
    }

    /// Trusted constructor for probabilities that come out of a softmax.
    pub(crate) fn from_softmax(n: usize, probs: Vec<EdgeProb>) -> Self {
        debug_assert_eq!(probs.len(), pair_count(n));
        EdgeProbabilities { n, probs }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[EdgeProb] {
        &self.probs
    }

    pub fn get(&self, e: &Edge) -> EdgeProb {
        self.probs[pair_index(self.n, e.i(), e.j())]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Edge, EdgeProb)> + '_ {
        pairs(self.n).zip(self.probs.iter().copied())
    }

    pub fn to_json(&self) -> String {
        let file = ProbFile {
            n: self.n,
            probs: self
                .iter()
                .map(|(e, p)| ProbRecord {
                    i: e.i(),
                    j: e.j(),
                    pos: p.pos,
                    neg: p.neg,
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("serialization is infallible")
    }

    /// Parses `{"n":4,"probs":[{"i":0,"j":1,"pos":0.9,"neg":0.1},...]}`.
    /// Records may appear in any order but every pair must be present once.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProbFile =
            serde_json::from_str(text).map_err(|e| Error::parse("<document>", e.to_string()))?;
        let n = file.n;
        let mut slots: Vec<Option<EdgeProb>> = vec![None; pair_count(n)];
        for (k, rec) in file.probs.iter().enumerate() {
            let field = format!("probs[{k}]");
            let e = Edge::new(rec.i, rec.j)
                .filter(|e| e.j() < n)
                .ok_or_else(|| {
                    Error::parse(
                        &field,
                        format!("invalid pair ({},{}) for n={n}", rec.i, rec.j),
                    )
                })?;
            let p = EdgeProb {
                pos: rec.pos,
                neg: rec.neg,
            };
            check_prob(&field, &p).map_err(|err| Error::parse(&field, err.to_string()))?;
            let slot = &mut slots[pair_index(n, e.i(), e.j())];
            if slot.is_some() {
                return Err(Error::parse(field, format!("duplicate pair {e}")));
            }
            *slot = Some(p);
        }
        let mut probs = Vec::with_capacity(slots.len());
        for (e, slot) in pairs(n).zip(slots) {
            probs.push(slot.ok_or_else(|| Error::parse("probs", format!("missing pair {e}")))?);
        }
        Ok(EdgeProbabilities { n, probs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EdgeProbabilities::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbFile {
    n: usize,
    probs: Vec<ProbRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbRecord {
    i: usize,
    j: usize,
    pos: f64,
    neg: f64,
}

fn check_prob(what: &str, p: &EdgeProb) -> Result<()> {
    let in_range = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
    if !in_range(p.pos) || !in_range(p.neg) {
        return Err(Error::invalid(format!(
            "{what}: probabilities ({}, {}) outside [0, 1]",
            p.pos, p.neg
        )));
    }
    if (p.pos + p.neg - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::invalid(format!(
            "{what}: probabilities ({}, {}) do not sum to 1",
            p.pos, p.neg
        )));
    }
    Ok(())
}

/// `Ẽ = {(i,j) | y⁺ > y⁻}`. Ties are excluded.
pub fn threshold_edges(p: &EdgeProbabilities) -> EdgeSet {
    p.iter()
        .filter(|(_, q)| q.pos > q.neg)
        .map(|(e, _)| e)
        .collect()
}

/// Minimum spanning tree of the complete graph with cost `y⁻`.
///
/// Pairs are visited in `(cost, i, j)` order, so equal-cost trees resolve
/// the same way on every run. Returns the empty set for `n = 0`.
pub fn project_mst(p: &EdgeProbabilities) -> EdgeSet {
    let n = p.node_count();
    let mut order: Vec<(f64, Edge)> = p.iter().map(|(e, q)| (q.neg, e)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut uf = UnionFind::new(n);
    let mut tree = EdgeSet::new();
    for (_, e) in order {
        if tree.len() + 1 >= n {
            break;
        }
        if uf.union(e.i(), e.j()) {
            tree.insert(e);
        }
    }
    tree
}

/// Output of [`project`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub edges: EdgeSet,
    pub delta: EdgeDelta,
    /// Set when the input had no nodes and the tree is trivially empty.
    pub degenerate: bool,
}

/// Projects the probabilities onto a spanning tree and reports which pairs
/// the projection flipped relative to thresholding.
pub fn project(p: &EdgeProbabilities) -> Projection {
    project_with(&MstProjector, p)
}

pub fn project_with<P: Projector + ?Sized>(projector: &P, p: &EdgeProbabilities) -> Projection {
    let edges = projector.project(p);
    let delta = EdgeDelta::between(p.node_count(), &threshold_edges(p), &edges)
        .expect("projector returned edges outside the node universe");
    Projection {
        edges,
        delta,
        degenerate: p.node_count() == 0,
    }
}

/// A discrete map from edge probabilities to a constrained edge set.
pub trait Projector {
    fn project(&self, p: &EdgeProbabilities) -> EdgeSet;
}

/// Kruskal spanning-tree projection.
#[derive(Debug, Clone, Copy, Default)]
pub struct MstProjector;

impl Projector for MstProjector {
    fn project(&self, p: &EdgeProbabilities) -> EdgeSet {
        project_mst(p)
    }
}

/// Leaves the thresholded edges untouched, so every delta is empty.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProjector;

impl Projector for IdentityProjector {
    fn project(&self, p: &EdgeProbabilities) -> EdgeSet {
        threshold_edges(p)
    }
}

pub fn tree_cost(p: &EdgeProbabilities, edges: &EdgeSet) -> f64 {
    edges.iter().map(|e| p.get(e).neg).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{edge_set, is_tree};

    fn k3() -> EdgeProbabilities {
        // pairs (0,1), (0,2), (1,2)
        EdgeProbabilities::from_existence(3, &[0.9, 0.8, 0.1]).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let mut pos = vec![0.2; 6];
        pos[0] = 0.9;
        let p = EdgeProbabilities::from_existence(4, &pos).unwrap();
        assert_eq!(threshold_edges(&p), edge_set([(0, 1)]));

        let p = EdgeProbabilities::from_existence(4, &[0.5; 6]).unwrap();
        assert!(threshold_edges(&p).is_empty());

        let p = EdgeProbabilities::from_existence(4, &[1.0; 6]).unwrap();
        assert_eq!(threshold_edges(&p).len(), 6);
    }

    #[test]
    fn k3_spanning_trees() {
        // The three spanning trees of K3 cost 0.3, 1.0 and 1.1.
        assert_eq!(project_mst(&k3()), edge_set([(0, 1), (0, 2)]));
    }

    #[test]
    fn equal_costs_follow_pair_order() {
        let p = EdgeProbabilities::from_existence(4, &[0.5; 6]).unwrap();
        assert_eq!(project_mst(&p), edge_set([(0, 1), (0, 2), (0, 3)]));
    }

    #[test]
    fn degenerate_sizes() {
        let p = EdgeProbabilities::from_existence(1, &[]).unwrap();
        assert!(project_mst(&p).is_empty());
        let p = EdgeProbabilities::from_existence(0, &[]).unwrap();
        let out = project(&p);
        assert!(out.edges.is_empty());
        assert!(out.degenerate);
    }

    #[test]
    fn projection_delta() {
        // every pair thresholds as an edge; costs keep the K3 ordering
        let complete = EdgeProbabilities::from_existence(3, &[0.9, 0.8, 0.6]).unwrap();
        assert_eq!(threshold_edges(&complete).len(), 3);
        let out = project(&complete);
        assert_eq!(out.delta.removed, edge_set([(1, 2)]));
        assert!(out.delta.added.is_empty());

        let p = EdgeProbabilities::from_existence(3, &[0.3, 0.2, 0.1]).unwrap();
        let out = project(&p);
        assert_eq!(out.delta.added, out.edges);
        assert!(out.delta.removed.is_empty());
        assert!(is_tree(3, &out.edges));
    }

    #[test]
    fn minimal_tree_is_a_fixed_point() {
        // path 0-1-2-3 with confident pairs, everything else unlikely
        let mut pos = vec![0.05; 6];
        for e in [(0, 1), (1, 2), (2, 3)] {
            pos[pair_index(4, e.0, e.1)] = 0.95;
        }
        let out = project(&EdgeProbabilities::from_existence(4, &pos).unwrap());
        assert!(out.delta.is_empty());
    }

    #[test]
    fn validation() {
        assert!(EdgeProbabilities::new(3, vec![EdgeProb { pos: 0.6, neg: 0.6 }; 3]).is_err());
        assert!(EdgeProbabilities::from_existence(3, &[0.5; 2]).is_err());
        assert!(EdgeProbabilities::from_existence(2, &[1.5]).is_err());
    }

    #[test]
    fn json_round_trip_and_errors() {
        let p = k3();
        assert_eq!(EdgeProbabilities::from_json(&p.to_json()).unwrap(), p);
        let missing = r#"{"n":3,"probs":[{"i":0,"j":1,"pos":0.9,"neg":0.1}]}"#;
        assert!(EdgeProbabilities::from_json(missing).is_err());
        let bad = r#"{"n":2,"probs":[{"i":0,"j":1,"pos":0.9,"neg":0.3}]}"#;
        assert!(matches!(
            EdgeProbabilities::from_json(bad),
            Err(Error::Parse { field, .. }) if field == "probs[0]"
        ));
    }
}
