//! Stochastic bracketed L-systems for synthetic tree skeletons.
//!
//! Sequences are strings over `F`, `A`, `+`, `-`, `[`, `]`. `F` is a fixed
//! branch segment and `A` a leaf segment that rewriting replaces with a
//! randomly chosen rule expansion. Both carry a generation counter that is
//! printed after the letter, e.g. `F0[+A0]F0[-A0]A0`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeSet, Point, SpatialGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    /// Branch segment with its generation.
    F(u32),
    /// Leaf segment with its generation.
    A(u32),
    Plus,
    Minus,
    Push,
    Pop,
}

impl Symbol {
    fn draws(&self) -> bool {
        matches!(self, Symbol::F(_) | Symbol::A(_))
    }
}

/// A parsed symbol sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Sequence(pub Vec<Symbol>);

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            match s {
                Symbol::F(g) => write!(f, "F{g}")?,
                Symbol::A(g) => write!(f, "A{g}")?,
                Symbol::Plus => f.write_str("+")?,
                Symbol::Minus => f.write_str("-")?,
                Symbol::Push => f.write_str("[")?,
                Symbol::Pop => f.write_str("]")?,
            }
        }
        Ok(())
    }
}

impl Sequence {
    /// Parses a sequence; letters without a counter get generation 0.
    /// Brackets must balance.
    pub fn parse(text: &str) -> Result<Sequence> {
        let mut out = Vec::new();
        let mut chars = text.chars().peekable();
        let mut depth = 0usize;
        while let Some(c) = chars.next() {
            let sym = match c {
                'F' | 'A' => {
                    let mut digits = String::new();
                    while let Some(d) = chars.peek().filter(|d| d.is_ascii_digit()) {
                        digits.push(*d);
                        chars.next();
                    }
                    let g = if digits.is_empty() {
                        0
                    } else {
                        digits
                            .parse()
                            .map_err(|_| Error::invalid(format!("bad counter `{digits}`")))?
                    };
                    if c == 'F' {
                        Symbol::F(g)
                    } else {
                        Symbol::A(g)
                    }
                }
                '+' => Symbol::Plus,
                '-' | '−' => Symbol::Minus,
                '[' => {
                    depth += 1;
                    Symbol::Push
                }
                ']' => {
                    depth = depth
                        .checked_sub(1)
                        .ok_or_else(|| Error::invalid(format!("unmatched `]` in `{text}`")))?;
                    Symbol::Pop
                }
                c if c.is_whitespace() => continue,
                other => {
                    return Err(Error::invalid(format!(
                        "unexpected symbol `{other}` in `{text}`"
                    )))
                }
            };
            out.push(sym);
        }
        if depth != 0 {
            return Err(Error::invalid(format!("unclosed `[` in `{text}`")));
        }
        Ok(Sequence(out))
    }

    pub fn max_generation(&self) -> u32 {
        self.0
            .iter()
            .filter_map(|s| match s {
                Symbol::F(g) | Symbol::A(g) => Some(*g),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn segment_count(&self) -> usize {
        self.0.iter().filter(|s| s.draws()).count()
    }
}

/// Replaces every `A(k)` with a uniformly chosen rule whose letters all get
/// generation `k + 1`. `F` symbols are copied unchanged.
pub fn rewrite<R: Rng + ?Sized>(seq: &Sequence, rules: &[Sequence], rng: &mut R) -> Sequence {
    assert!(!rules.is_empty(), "rewriting needs at least one rule");
    let mut out = Vec::with_capacity(seq.0.len() * 4);
    for sym in &seq.0 {
        match *sym {
            Symbol::A(g) => {
                let rule = &rules[rng.random_range(0..rules.len())];
                out.extend(rule.0.iter().map(|s| match *s {
                    Symbol::F(_) => Symbol::F(g + 1),
                    Symbol::A(_) => Symbol::A(g + 1),
                    other => other,
                }));
            }
            other => out.push(other),
        }
    }
    Sequence(out)
}

/// Generator parameters, read from and written to JSON as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LSystemSpec {
    pub axioms: Vec<String>,
    /// Right-hand sides of the `A → …` rules.
    pub rules: Vec<String>,
    pub max_iterations: u32,
    pub length_scale_range: [f64; 2],
    pub angle_range_deg: [f64; 2],
    /// Samples must have strictly fewer nodes than this.
    pub max_nodes: usize,
    /// Square canvas side in pixels; coordinates are divided by it.
    pub canvas: f64,
    /// Unscaled segment length in pixels. Defaults to `canvas / 16`.
    pub base_length: Option<f64>,
}

impl Default for LSystemSpec {
    fn default() -> Self {
        LSystemSpec {
            axioms: ["F0[+A0]A0", "F0[-A0]A0", "F0[+A0]F0[-A0]A0"]
                .map(String::from)
                .to_vec(),
            rules: [
                "F[+A]",
                "F[-A]",
                "F[+A][-A]",
                "F[+A]A",
                "F[-A]A",
                "FF[+A]",
                "FF[-A]",
                "F[+A][-A]A",
            ]
            .map(String::from)
            .to_vec(),
            max_iterations: 3,
            length_scale_range: [0.5, 2.5],
            angle_range_deg: [10.0, 35.0],
            max_nodes: 100,
            canvas: 512.0,
            base_length: None,
        }
    }
}

/// Validated spec with parsed sequences.
#[derive(Debug, Clone)]
pub struct Grammar {
    pub spec: LSystemSpec,
    pub axioms: Vec<Sequence>,
    pub rules: Vec<Sequence>,
}

impl LSystemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("<document>", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serialization is infallible")
    }

    pub fn base_length(&self) -> f64 {
        self.base_length.unwrap_or(self.canvas / 16.0)
    }

    pub fn compile(&self) -> Result<Grammar> {
        let parse_list = |name: &str, items: &[String]| -> Result<Vec<Sequence>> {
            if items.is_empty() {
                return Err(Error::parse(name, "must not be empty"));
            }
            items
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    Sequence::parse(s)
                        .map_err(|e| Error::parse(format!("{name}[{k}]"), e.to_string()))
                })
                .collect()
        };
        let axioms = parse_list("axioms", &self.axioms)?;
        let rules = parse_list("rules", &self.rules)?;
        let range = |name: &str, r: [f64; 2], min: f64| {
            if r.iter().all(|v| v.is_finite()) && r[0] <= r[1] && r[0] >= min {
                Ok(())
            } else {
                Err(Error::parse(
                    name,
                    format!("invalid range [{}, {}]", r[0], r[1]),
                ))
            }
        };
        range(
            "length_scale_range",
            self.length_scale_range,
            f64::MIN_POSITIVE,
        )?;
        range("angle_range_deg", self.angle_range_deg, 0.0)?;
        if self.max_nodes < 2 {
            return Err(Error::parse("max_nodes", "must be at least 2"));
        }
        if !(self.canvas.is_finite() && self.canvas > 0.0) {
            return Err(Error::parse("canvas", "must be positive"));
        }
        if !(self.base_length().is_finite() && self.base_length() > 0.0) {
            return Err(Error::parse("base_length", "must be positive"));
        }
        Ok(Grammar {
            spec: self.clone(),
            axioms,
            rules,
        })
    }
}

/// Random draws made while interpreting one sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterpretTrace {
    pub length_scales: Vec<f64>,
    pub turn_angles_deg: Vec<f64>,
}

/// Why an interpretation was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    TooManyNodes(usize),
    DoesNotFit,
}

#[derive(Debug, Clone, Copy)]
struct TurtleState {
    pos: (f64, f64),
    heading: f64,
    node: usize,
}

/// Fraction of the canvas kept free on each side.
const MARGIN: f64 = 0.02;

/// Draws the sequence with a turtle that starts heading up. Each segment
/// endpoint becomes a node; `[`/`]` save and restore position, heading and
/// the current node, so branches share their joint. The drawing is centered
/// on the canvas and normalized by its side.
pub fn interpret<R: Rng + ?Sized>(
    seq: &Sequence,
    rng: &mut R,
    spec: &LSystemSpec,
) -> Result<(SpatialGraph, InterpretTrace), Rejection> {
    let n_nodes = seq.segment_count() + 1;
    if n_nodes >= spec.max_nodes {
        return Err(Rejection::TooManyNodes(n_nodes));
    }
    let base = spec.base_length();
    let [lo, hi] = spec.length_scale_range;
    let [alo, ahi] = spec.angle_range_deg;
    let mut trace = InterpretTrace::default();
    let mut pts = vec![(0.0f64, 0.0f64)];
    let mut edges = EdgeSet::new();
    let mut state = TurtleState {
        pos: (0.0, 0.0),
        heading: 90f64.to_radians(),
        node: 0,
    };
    let mut stack = Vec::new();
    for sym in &seq.0 {
        match sym {
            Symbol::F(_) | Symbol::A(_) => {
                let scale = uniform(rng, lo, hi);
                trace.length_scales.push(scale);
                let len = base * scale;
                let next = (
                    state.pos.0 + len * state.heading.cos(),
                    state.pos.1 + len * state.heading.sin(),
                );
                pts.push(next);
                let id = pts.len() - 1;
                edges.insert(Edge::new(state.node, id).expect("fresh node differs"));
                state.pos = next;
                state.node = id;
            }
            Symbol::Plus | Symbol::Minus => {
                let a = uniform(rng, alo, ahi);
                trace.turn_angles_deg.push(a);
                let signed = if *sym == Symbol::Plus { a } else { -a };
                state.heading += signed.to_radians();
            }
            Symbol::Push => stack.push(state),
            Symbol::Pop => state = stack.pop().expect("sequence brackets are balanced"),
        }
    }

    let (min_x, max_x) = min_max(pts.iter().map(|p| p.0));
    let (min_y, max_y) = min_max(pts.iter().map(|p| p.1));
    let canvas = spec.canvas;
    let usable = canvas * (1.0 - 2.0 * MARGIN);
    if max_x - min_x > usable || max_y - min_y > usable {
        return Err(Rejection::DoesNotFit);
    }
    let cx = (min_x + max_x) / 2.0;
    let cy = (min_y + max_y) / 2.0;
    // image rows grow downward
    let nodes: Vec<Point> = pts
        .iter()
        .map(|&(x, y)| {
            let px = canvas / 2.0 + (x - cx);
            let py = canvas / 2.0 - (y - cy);
            Point::new((px / canvas).clamp(0.0, 1.0), (py / canvas).clamp(0.0, 1.0))
        })
        .collect();
    let graph = SpatialGraph::new(nodes, edges).expect("turtle output is valid");
    Ok((graph, trace))
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn min_max(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    })
}

/// One accepted sample.
#[derive(Debug, Clone)]
pub struct TreeSample {
    pub graph: SpatialGraph,
    pub sequence: Sequence,
    pub iterations: u32,
    pub trace: InterpretTrace,
    /// Interpretations rejected before this one was accepted.
    pub rejected: usize,
}

const MAX_ATTEMPTS: usize = 10_000;

/// Draws an axiom, rewrites it between 1 and `max_iterations` times and
/// interprets the result, retrying whenever the drawing is rejected.
pub fn generate_tree<R: Rng + ?Sized>(grammar: &Grammar, rng: &mut R) -> Result<TreeSample> {
    let spec = &grammar.spec;
    for attempt in 0..MAX_ATTEMPTS {
        let mut seq = grammar.axioms[rng.random_range(0..grammar.axioms.len())].clone();
        let iterations = if spec.max_iterations == 0 {
            0
        } else {
            rng.random_range(1..=spec.max_iterations)
        };
        for _ in 0..iterations {
            seq = rewrite(&seq, &grammar.rules, rng);
        }
        if let Ok((graph, trace)) = interpret(&seq, rng, spec) {
            return Ok(TreeSample {
                graph,
                sequence: seq,
                iterations,
                trace,
                rejected: attempt,
            });
        }
    }
    Err(Error::invalid(format!(
        "no sample accepted after {MAX_ATTEMPTS} attempts; loosen max_nodes or the length range"
    )))
}

/// Places nodes every `interval_px` (measured in pixels of a
/// `canvas_px`-wide canvas) along each maximal chain of degree-2 nodes,
/// starting from the chain's lower-id keypoint. Keypoints (degree ≠ 2) are
/// kept with their coordinates; new nodes lie on the original polyline.
pub fn resample_nodes(g: &SpatialGraph, interval_px: f64, canvas_px: f64) -> Result<SpatialGraph> {
    if !(interval_px.is_finite() && interval_px > 0.0) {
        return Err(Error::invalid(format!(
            "resampling interval must be positive, got {interval_px}"
        )));
    }
    if !(canvas_px.is_finite() && canvas_px > 0.0) {
        return Err(Error::invalid("canvas size must be positive"));
    }
    if !g.is_tree() {
        return Err(Error::invalid("resampling expects a tree"));
    }
    let deg = g.degrees();
    let adj = {
        let mut a = g.adjacency();
        a.iter_mut().for_each(|v| v.sort_unstable());
        a
    };
    let old = g.nodes();
    let keypoints: Vec<usize> = (0..old.len()).filter(|&v| deg[v] != 2).collect();
    let mut new_id = vec![usize::MAX; old.len()];
    let mut nodes = Vec::new();
    for &k in &keypoints {
        new_id[k] = nodes.len();
        nodes.push(old[k]);
    }
    let mut edges = EdgeSet::new();
    let mut done = EdgeSet::new();
    for &start in &keypoints {
        for &first in &adj[start] {
            if done.contains(&Edge::new(start, first).expect("no self-loops")) {
                continue;
            }
            let mut chain = vec![start, first];
            while deg[*chain.last().expect("non-empty")] == 2 {
                let (prev, cur) = (chain[chain.len() - 2], chain[chain.len() - 1]);
                let next = adj[cur]
                    .iter()
                    .copied()
                    .find(|&v| v != prev)
                    .expect("degree two");
                chain.push(next);
            }
            for w in chain.windows(2) {
                done.insert(Edge::new(w[0], w[1]).expect("no self-loops"));
            }
            let poly: Vec<Point> = chain.iter().map(|&v| old[v]).collect();
            let seg_len: Vec<f64> = poly
                .windows(2)
                .map(|w| w[0].distance(&w[1]) * canvas_px)
                .collect();
            let total: f64 = seg_len.iter().sum();
            let mut prev_id = new_id[start];
            let mut seg = 0;
            let mut seg_start = 0.0;
            let mut s = interval_px;
            while s < total - 1e-9 * total.max(1.0) {
                while seg_start + seg_len[seg] < s {
                    seg_start += seg_len[seg];
                    seg += 1;
                }
                let t = if seg_len[seg] > 0.0 {
                    (s - seg_start) / seg_len[seg]
                } else {
                    0.0
                };
                let p = poly[seg].lerp(&poly[seg + 1], t);
                let id = nodes.len();
                nodes.push(Point::new(p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0)));
                edges.insert(Edge::new(prev_id, id).expect("fresh node differs"));
                prev_id = id;
                s += interval_px;
            }
            let end = *chain.last().expect("non-empty");
            edges.insert(Edge::new(prev_id, new_id[end]).expect("chain endpoints differ"));
        }
    }
    SpatialGraph::new(nodes, edges)
}
