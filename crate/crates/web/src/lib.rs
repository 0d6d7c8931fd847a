//! Browser bindings. Each export returns a JSON document for the page to draw.

use rand::Rng;
use serde::Serialize;
use serde_json::json;
use treecon::graph::{EdgeSet, Membership, Point};
use treecon::lsystem::{generate_tree, LSystemSpec};
use treecon::mst::{project, threshold_edges, EdgeProbabilities};
use treecon::sfs::{pair_gradient, target, SfsConfig, Suppression};
use treecon::train::stream_rng;
use treecon::{Error, Result};
use wasm_bindgen::prelude::*;

const TREE_STREAM: u64 = 1 << 32;
const POINT_STREAM: u64 = 2 << 32;

fn pairs(set: &EdgeSet) -> Vec<[usize; 2]> {
    set.iter().map(|e| [e.i(), e.j()]).collect()
}

fn coords(nodes: &[Point]) -> Vec<[f64; 2]> {
    nodes.iter().map(|p| [p.x, p.y]).collect()
}

fn to_text<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serialization is infallible")
}

/// A random tree from the built-in rule set.
pub fn tree(seed: u64, index: u32, max_iterations: u32) -> Result<String> {
    let spec = LSystemSpec {
        max_iterations,
        ..Default::default()
    };
    let grammar = spec.compile()?;
    let sample = generate_tree(&grammar, &mut stream_rng(seed, TREE_STREAM + index as u64))?;
    Ok(to_text(&json!({
        "nodes": coords(sample.graph.nodes()),
        "edges": pairs(sample.graph.edges()),
        "sequence": sample.sequence.to_string(),
        "iterations": sample.iterations,
    })))
}

/// Scatters `n` points, scores every pair by proximity blended with uniform
/// noise, and projects the scores onto a spanning tree.
pub fn projection(seed: u64, n: usize, noise: f64) -> Result<String> {
    if !(1..=60).contains(&n) {
        return Err(Error::Invalid(format!(
            "node count must lie in 1..=60, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Invalid(format!(
            "noise must lie in [0, 1], got {noise}"
        )));
    }
    let mut rng = stream_rng(seed, POINT_STREAM);
    let nodes: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)))
        .collect();
    let mut pos = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let near = (-nodes[i].distance_sq(&nodes[j]) / (2.0 * 0.2 * 0.2)).exp();
            pos.push((1.0 - noise) * near + noise * rng.random::<f64>());
        }
    }
    let probs = EdgeProbabilities::from_existence(n, &pos)?;
    let proj = project(&probs);
    Ok(to_text(&json!({
        "nodes": coords(&nodes),
        "thresholded": pairs(&threshold_edges(&probs)),
        "tree": pairs(&proj.edges),
        "added": pairs(&proj.delta.added),
        "removed": pairs(&proj.delta.removed),
    })))
}

/// Gradients with respect to both logits of one pair, with and without
/// suppression, as the surviving logit sweeps `[-8, 8]` and the other
/// stays at 0.
pub fn gradient_curves(
    lambda: f64,
    membership: &str,
    target_exists: bool,
    steps: usize,
) -> Result<String> {
    let cfg = SfsConfig::new(lambda)?;
    let membership = match membership {
        "added" => Membership::Added,
        "removed" => Membership::Removed,
        "unmodified" => Membership::Unmodified,
        other => return Err(Error::Invalid(format!("unknown membership `{other}`"))),
    };
    if steps < 2 {
        return Err(Error::Invalid("steps must be at least 2".into()));
    }
    let s = Suppression::for_membership(membership);
    let sweep = s.surviving().unwrap_or(0);
    let t = target(target_exists);
    let mut xs = Vec::with_capacity(steps);
    let (mut constrained, mut plain) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
    for k in 0..steps {
        let x = -8.0 + 16.0 * k as f64 / (steps - 1) as f64;
        let mut f = [0.0; 2];
        f[sweep] = x;
        xs.push(x);
        constrained.push(pair_gradient(f, s, t, cfg.lambda()));
        plain.push(pair_gradient(f, Suppression::None, t, cfg.lambda()));
    }
    Ok(to_text(&json!({
        "lambda": cfg.lambda(),
        "suppressed_weight": cfg.suppressed_weight(),
        "sweep": if sweep == 0 { "f+" } else { "f-" },
        "x": xs,
        "constrained": constrained,
        "unconstrained": plain,
    })))
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = tree)]
pub fn tree_js(seed: u32, index: u32, max_iterations: u32) -> std::result::Result<String, JsError> {
    js(tree(seed as u64, index, max_iterations))
}

#[wasm_bindgen(js_name = projection)]
pub fn projection_js(seed: u32, n: u32, noise: f64) -> std::result::Result<String, JsError> {
    js(projection(seed as u64, n as usize, noise))
}

#[wasm_bindgen(js_name = gradientCurves)]
pub fn gradient_curves_js(
    lambda: f64,
    membership: &str,
    target_exists: bool,
    steps: u32,
) -> std::result::Result<String, JsError> {
    js(gradient_curves(
        lambda,
        membership,
        target_exists,
        steps as usize,
    ))
}
