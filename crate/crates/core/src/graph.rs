//! Spatial graph model shared by every stage of the pipeline.
//!
//! Nodes carry normalized 2D coordinates in `[0, 1]²` and are addressed by
//! contiguous ids starting at 0. Edges are undirected and stored in
//! canonical `i < j` form so set operations are deterministic.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::union_find::UnionFind;

/// Undirected edge in canonical form (`i < j`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    i: usize,
    j: usize,
}

impl Edge {
    /// Canonicalizes the pair. Self-loops are rejected.
    pub fn new(a: usize, b: usize) -> Option<Edge> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Edge { i: a, j: b }),
            std::cmp::Ordering::Greater => Some(Edge { i: b, j: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.i, self.j)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.i, self.j)
    }
}

impl Serialize for Edge {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.i, self.j].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Edge {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [a, b] = <[usize; 2]>::deserialize(d)?;
        Edge::new(a, b).ok_or_else(|| serde::de::Error::custom(format!("self-loop on node {a}")))
    }
}

/// Builds an edge set from raw pairs, panicking on self-loops. Intended for
/// literals in tests and examples.
pub fn edge_set<I: IntoIterator<Item = (usize, usize)>>(pairs: I) -> EdgeSet {
    pairs
        .into_iter()
        .map(|(a, b)| Edge::new(a, b).expect("self-loop in edge literal"))
        .collect()
}

pub type EdgeSet = BTreeSet<Edge>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(&self, other: &Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

/// Undirected graph with normalized node coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    nodes: Vec<Point>,
    edges: EdgeSet,
}

impl SpatialGraph {
    /// Validates coordinates and edge endpoints. Duplicate pairs collapse
    /// into one canonical edge.
    pub fn new(nodes: Vec<Point>, edges: EdgeSet) -> Result<Self> {
        for (id, p) in nodes.iter().enumerate() {
            check_coord(&format!("nodes[{id}].x"), p.x)?;
            check_coord(&format!("nodes[{id}].y"), p.y)?;
        }
        check_edges(nodes.len(), &edges)?;
        Ok(SpatialGraph { nodes, edges })
    }

    pub fn from_pairs<I>(nodes: Vec<Point>, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut edges = EdgeSet::new();
        for (a, b) in pairs {
            let e =
                Edge::new(a, b).ok_or_else(|| Error::invalid(format!("self-loop on node {a}")))?;
            edges.insert(e);
        }
        SpatialGraph::new(nodes, edges)
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn edges(&self) -> &EdgeSet {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Same nodes, different edge set.
    pub fn with_edges(&self, edges: EdgeSet) -> Result<Self> {
        check_edges(self.nodes.len(), &edges)?;
        Ok(SpatialGraph {
            nodes: self.nodes.clone(),
            edges,
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[e.i] += 1;
            deg[e.j] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        adj
    }

    pub fn edge_length(&self, e: &Edge) -> f64 {
        self.nodes[e.i].distance(&self.nodes[e.j])
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| self.edge_length(e)).sum()
    }

    /// True iff the graph is a spanning tree: `|E| = |V| - 1` and connected.
    /// The empty graph and a single isolated node both count as trees.
    pub fn is_tree(&self) -> bool {
        is_tree(self.nodes.len(), &self.edges)
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, p)| NodeRecord { id, x: p.x, y: p.y })
                .collect(),
            edges: self.edges.iter().map(|e| [e.i, e.j]).collect(),
        };
        serde_json::to_string(&file).expect("graph serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| Error::parse("<document>", e.to_string()))?;
        let n = file.nodes.len();
        let mut slots: Vec<Option<Point>> = vec![None; n];
        for (k, rec) in file.nodes.iter().enumerate() {
            if rec.id >= n {
                return Err(Error::parse(
                    format!("nodes[{k}].id"),
                    format!("id {} breaks contiguous numbering 0..{n}", rec.id),
                ));
            }
            if slots[rec.id].is_some() {
                return Err(Error::parse(
                    format!("nodes[{k}].id"),
                    format!("duplicate id {}", rec.id),
                ));
            }
            check_coord(&format!("nodes[{k}].x"), rec.x)?;
            check_coord(&format!("nodes[{k}].y"), rec.y)?;
            slots[rec.id] = Some(Point::new(rec.x, rec.y));
        }
        let nodes: Vec<Point> = slots
            .into_iter()
            .map(|p| p.expect("all ids seen"))
            .collect();

        let mut edges = EdgeSet::new();
        for (k, [a, b]) in file.edges.iter().copied().enumerate() {
            let field = format!("edges[{k}]");
            if a >= n || b >= n {
                return Err(Error::parse(
                    field,
                    format!("edge [{a},{b}] references a node outside 0..{n}"),
                ));
            }
            let e = Edge::new(a, b)
                .ok_or_else(|| Error::parse(field.clone(), format!("self-loop on node {a}")))?;
            if !edges.insert(e) {
                return Err(Error::parse(field, format!("duplicate edge {e}")));
            }
        }
        Ok(SpatialGraph { nodes, edges })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SpatialGraph::from_json(&text).map_err(|e| match e {
            Error::Parse { field, message } => Error::Parse {
                field: format!("{}: {field}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: usize,
    x: f64,
    y: f64,
}

fn check_coord(field: &str, v: f64) -> Result<()> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::parse(
            field,
            format!("coordinate {v} outside [0, 1]"),
        ));
    }
    Ok(())
}

fn check_edges(n: usize, edges: &EdgeSet) -> Result<()> {
    if let Some(e) = edges.iter().find(|e| e.j >= n) {
        return Err(Error::invalid(format!(
            "edge {e} references a node outside 0..{n}"
        )));
    }
    Ok(())
}

/// Spanning-tree test on an abstract node universe `0..n`.
pub fn is_tree(n: usize, edges: &EdgeSet) -> bool {
    if n <= 1 {
        return edges.is_empty();
    }
    if edges.len() != n - 1 {
        return false;
    }
    let mut uf = UnionFind::new(n);
    edges.iter().all(|e| uf.union(e.i, e.j))
}

/// How the projection changed a node pair relative to thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Membership {
    Unmodified,
    /// In `E⁺`: absent before projection, present after.
    Added,
    /// In `E⁻`: present before projection, absent after.
    Removed,
}

/// Edges added (`E⁺ = E − Ẽ`) and removed (`E⁻ = Ẽ − E`) by a projection.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeDelta {
    pub added: EdgeSet,
    pub removed: EdgeSet,
}

impl EdgeDelta {
    /// Computes the delta between the unconstrained edge set and the
    /// constrained one, both over nodes `0..n`.
    pub fn between(n: usize, unconstrained: &EdgeSet, constrained: &EdgeSet) -> Result<Self> {
        for (name, set) in [
            ("unconstrained", unconstrained),
            ("constrained", constrained),
        ] {
            if let Some(e) = set.iter().find(|e| e.j >= n) {
                return Err(Error::invalid(format!(
                    "{name} edge {e} is outside the node universe 0..{n}"
                )));
            }
        }
        Ok(EdgeDelta {
            added: constrained.difference(unconstrained).copied().collect(),
            removed: unconstrained.difference(constrained).copied().collect(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    pub fn len(&self) -> usize {
        self.added.len() + self.removed.len()
    }

    pub fn membership(&self, e: &Edge) -> Membership {
        if self.added.contains(e) {
            Membership::Added
        } else if self.removed.contains(e) {
            Membership::Removed
        } else {
            Membership::Unmodified
        }
    }

    /// `(base − removed) ∪ added`.
    pub fn apply(&self, base: &EdgeSet) -> EdgeSet {
        base.difference(&self.removed)
            .chain(self.added.iter())
            .copied()
            .collect()
    }

    pub fn max_node(&self) -> Option<usize> {
        self.added.iter().chain(&self.removed).map(|e| e.j).max()
    }
}
