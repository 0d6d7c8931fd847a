//! Evaluation metrics: street mover's distance (SMD), keypoint TOPO scores
//! and tree rate.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::graph::{Point, SpatialGraph};

pub const DEFAULT_K_POINTS: usize = 100;
pub const DEFAULT_TOPO_RADIUS: f64 = 0.01;

/// `K` points spread uniformly by arc length over a graph's edges, each
/// carrying mass `1/K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    /// The graph had no edges; every point sits at the node centroid.
    pub degenerate: bool,
}

/// Places point `ℓ` at arc length `(ℓ + ½)·L/K` along the concatenation of
/// the edges in canonical order.
pub fn sample_edge_points(g: &SpatialGraph, k: usize) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::invalid("point count must be at least 1"));
    }
    if g.node_count() == 0 {
        return Err(Error::invalid("cannot sample points from an empty graph"));
    }
    let nodes = g.nodes();
    if g.edge_count() == 0 {
        let n = nodes.len() as f64;
        let c = Point::new(
            nodes.iter().map(|p| p.x).sum::<f64>() / n,
            nodes.iter().map(|p| p.y).sum::<f64>() / n,
        );
        return Ok(PointCloud {
            points: vec![c; k],
            degenerate: true,
        });
    }
    let segs: Vec<(Point, Point, f64)> = g
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = (nodes[e.i()], nodes[e.j()]);
            (a, b, a.distance(&b))
        })
        .collect();
    let total: f64 = segs.iter().map(|s| s.2).sum();
    if total == 0.0 {
        return Ok(PointCloud {
            points: vec![segs[0].0; k],
            degenerate: false,
        });
    }

    let mut points = Vec::with_capacity(k);
    let mut seg = 0;
    let mut start = 0.0;
    for l in 0..k {
        let s = (l as f64 + 0.5) * total / k as f64;
        while seg + 1 < segs.len() && start + segs[seg].2 < s {
            start += segs[seg].2;
            seg += 1;
        }
        let (a, b, len) = segs[seg];
        let t = if len > 0.0 {
            ((s - start) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        points.push(a.lerp(&b, t));
    }
    Ok(PointCloud {
        points,
        degenerate: false,
    })
}

/// Mean squared-Euclidean cost of the optimal one-to-one transport between
/// two equal-size uniform clouds.
pub fn cloud_distance(a: &[Point], b: &[Point]) -> f64 {
    assert_eq!(a.len(), b.len(), "clouds must have equal cardinality");
    if a.is_empty() {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|p| b.iter().map(|q| p.distance_sq(q)).collect())
        .collect();
    let (_, total) = assignment::solve(&cost);
    (total / a.len() as f64).max(0.0)
}

/// Street mover's distance between the edge geometry of two graphs.
pub fn smd(pred: &SpatialGraph, gt: &SpatialGraph, k: usize) -> Result<f64> {
    let a = sample_edge_points(pred, k)?;
    let b = sample_edge_points(gt, k)?;
    Ok(cloud_distance(&a.points, &b.points))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopoScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TopoScore {
    fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        TopoScore {
            precision,
            recall,
            f1,
        }
    }
}

/// Nodes of degree ≠ 2 (joints and leaves) with their degrees.
pub fn keypoints(g: &SpatialGraph) -> Vec<(Point, usize)> {
    g.degrees()
        .into_iter()
        .enumerate()
        .filter(|(_, d)| *d != 2)
        .map(|(i, d)| (g.nodes()[i], d))
        .collect()
}

/// Keypoint precision/recall: keypoints are matched one-to-one within
/// `radius`, maximizing the number of matches and then minimizing total
/// distance; a match counts only when both degrees agree.
pub fn topo_score(pred: &SpatialGraph, gt: &SpatialGraph, radius: f64) -> TopoScore {
    let p = keypoints(pred);
    let t = keypoints(gt);
    let tp = if p.is_empty() || t.is_empty() {
        0
    } else {
        let m = p.len().max(t.len());
        // Any extra feasible match saves more than all feasible costs combined.
        let infeasible = radius * (m as f64 + 1.0) + 1.0;
        let mut cost = vec![vec![infeasible; m]; m];
        for (r, (pp, _)) in p.iter().enumerate() {
            for (c, (tt, _)) in t.iter().enumerate() {
                let d = pp.distance(tt);
                if d <= radius {
                    cost[r][c] = d;
                }
            }
        }
        let (assign, _) = assignment::solve(&cost);
        assign
            .iter()
            .enumerate()
            .filter(|&(r, &c)| r < p.len() && c < t.len() && cost[r][c] <= radius)
            .filter(|&(r, &c)| p[r].1 == t[c].1)
            .count()
    };
    let precision = if p.is_empty() {
        1.0
    } else {
        tp as f64 / p.len() as f64
    };
    let recall = if t.is_empty() {
        1.0
    } else {
        tp as f64 / t.len() as f64
    };
    TopoScore::new(precision, recall)
}

/// Fraction of graphs that are spanning trees.
pub fn tree_rate(graphs: &[SpatialGraph]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::invalid("tree rate of an empty list"));
    }
    Ok(graphs.iter().filter(|g| g.is_tree()).count() as f64 / graphs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub k_points: usize,
    pub topo_radius: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            k_points: DEFAULT_K_POINTS,
            topo_radius: DEFAULT_TOPO_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub name: String,
    pub smd: f64,
    pub topo_precision: f64,
    pub topo_recall: f64,
    pub topo_f1: f64,
    pub is_tree: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub smd: f64,
    pub topo_precision: f64,
    pub topo_recall: f64,
    pub topo_f1: f64,
    pub tree_rate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregate: Aggregate,
    pub samples: Vec<SampleMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serialization is infallible")
    }

    /// One JSON object per sample, newline terminated.
    pub fn samples_jsonl(&self) -> String {
        self.samples
            .iter()
            .map(|s| serde_json::to_string(s).expect("serialization is infallible") + "\n")
            .collect()
    }
}

pub fn sample_metrics(
    name: &str,
    pred: &SpatialGraph,
    gt: &SpatialGraph,
    cfg: &MetricsConfig,
) -> Result<SampleMetrics> {
    let topo = topo_score(pred, gt, cfg.topo_radius);
    Ok(SampleMetrics {
        name: name.to_string(),
        smd: smd(pred, gt, cfg.k_points)?,
        topo_precision: topo.precision,
        topo_recall: topo.recall,
        topo_f1: topo.f1,
        is_tree: pred.is_tree(),
    })
}

/// Aggregates per-sample metrics: means, except tree rate which is the
/// proportion of tree outputs.
pub fn aggregate(samples: Vec<SampleMetrics>) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let n = samples.len() as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n;
    let aggregate = Aggregate {
        smd: mean(|s| s.smd),
        topo_precision: mean(|s| s.topo_precision),
        topo_recall: mean(|s| s.topo_recall),
        topo_f1: mean(|s| s.topo_f1),
        tree_rate: samples.iter().filter(|s| s.is_tree).count() as f64 / n,
        n: samples.len(),
    };
    Ok(MetricsReport { aggregate, samples })
}

/// Evaluates named `(pred, gt)` pairs in parallel; the report keeps the
/// input order.
pub fn evaluate_pairs(
    pairs: &[(String, SpatialGraph, SpatialGraph)],
    cfg: &MetricsConfig,
) -> Result<MetricsReport> {
    let samples = pairs
        .par_iter()
        .map(|(name, pred, gt)| sample_metrics(name, pred, gt, cfg))
        .collect::<Result<Vec<_>>>()?;
    aggregate(samples)
}

/// Graph files of a directory, sorted by name. A dataset directory (one
/// holding `graphs/`) resolves to that subdirectory.
pub fn graph_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let dir = if dir.join("graphs").is_dir() {
        dir.join("graphs")
    } else {
        dir.to_path_buf()
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let Some(name) = path.file_name().and_then(|s| s.to_str()) else {
            continue;
        };
        if path.is_file()
            && name.ends_with(".json")
            && name != "manifest.json"
            && !name.starts_with("config")
        {
            out.push((name.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

/// Evaluates every prediction in `pred_dir` against the same-named graph in
/// `gt_dir`.
pub fn evaluate_dataset(
    pred_dir: &Path,
    gt_dir: &Path,
    cfg: &MetricsConfig,
) -> Result<MetricsReport> {
    let preds = graph_files(pred_dir)?;
    let gts = graph_files(gt_dir)?;
    let pred_names: BTreeSet<&str> = preds.iter().map(|(n, _)| n.as_str()).collect();
    let gt_names: BTreeSet<&str> = gts.iter().map(|(n, _)| n.as_str()).collect();
    let orphans: Vec<String> = pred_names
        .symmetric_difference(&gt_names)
        .map(|n| {
            let side = if pred_names.contains(n) {
                "prediction"
            } else {
                "ground truth"
            };
            format!("{n} ({side} only)")
        })
        .collect();
    if !orphans.is_empty() {
        return Err(Error::invalid(format!(
            "files without a counterpart: {}",
            orphans.join(", ")
        )));
    }
    let samples = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|((name, pred_path), (_, gt_path))| {
            let pred = SpatialGraph::load(pred_path)?;
            let gt = SpatialGraph::load(gt_path)?;
            sample_metrics(name, &pred, &gt, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(samples)
}
