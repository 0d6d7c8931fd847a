//! On-disk synthetic datasets.
//!
//! Layout: `manifest.json`, `graphs/NNNNNN.json` and optionally
//! `images/NNNNNN.png`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::lsystem::{generate_tree, resample_nodes, Grammar, LSystemSpec};
use crate::raster::{rasterize, RenderOptions};
use crate::train::stream_rng;

const GENERATE_STREAM: u64 = 5 << 32;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetOptions {
    /// Write a PNG per sample at the grammar's canvas size.
    pub render: Option<RenderOptions>,
    /// Resample chains every this many canvas pixels.
    pub resample_px: Option<f64>,
    /// Global index of the first sample, so a dataset can be split into
    /// disjoint ranges of the same sequence.
    pub first_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub nodes: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// SHA-256 of the L-system spec's canonical JSON.
    pub spec_hash: String,
    pub spec: LSystemSpec,
    pub count: usize,
    pub first_index: usize,
    pub resample_px: Option<f64>,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialization is infallible")
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}

pub fn spec_hash(spec: &LSystemSpec) -> String {
    Sha256::digest(spec.to_json().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sample_name(index: usize) -> String {
    format!("{index:06}")
}

/// Sample `index` of the dataset defined by `(grammar, seed)`; independent
/// of how many other samples are drawn or in which order.
pub fn generate_sample(
    grammar: &Grammar,
    seed: u64,
    index: usize,
    resample_px: Option<f64>,
) -> Result<SpatialGraph> {
    let mut rng = stream_rng(seed, GENERATE_STREAM + index as u64);
    let tree = generate_tree(grammar, &mut rng)?;
    match resample_px {
        Some(px) => resample_nodes(&tree.graph, px, grammar.spec.canvas),
        None => Ok(tree.graph),
    }
}

/// Generates `count` samples in parallel and writes them under `out_dir`.
pub fn generate_dataset(
    spec: &LSystemSpec,
    count: usize,
    seed: u64,
    out_dir: &Path,
    opts: &DatasetOptions,
) -> Result<Manifest> {
    let grammar = spec.compile()?;
    let graphs_dir = out_dir.join("graphs");
    fs::create_dir_all(&graphs_dir).map_err(|e| Error::io(&graphs_dir, e))?;
    let images_dir = out_dir.join("images");
    if opts.render.is_some() {
        fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    }
    let canvas = spec.canvas.round().max(1.0) as u32;
    let first = opts.first_index;
    let samples = (first..first + count)
        .into_par_iter()
        .map(|index| {
            let in_sample = |e: Error| with_sample(index, e);
            let graph =
                generate_sample(&grammar, seed, index, opts.resample_px).map_err(in_sample)?;
            let name = sample_name(index);
            let path = graphs_dir.join(format!("{name}.json"));
            graph.save(&path).map_err(in_sample)?;
            if let Some(render) = opts.render {
                let png = rasterize(&graph, canvas, canvas, render)
                    .and_then(|img| img.to_png())
                    .map_err(in_sample)?;
                let path = images_dir.join(format!("{name}.png"));
                fs::write(&path, png).map_err(|e| in_sample(Error::io(&path, e)))?;
            }
            Ok(ManifestEntry {
                index,
                file: format!("graphs/{name}.json"),
                nodes: graph.node_count(),
                edges: graph.edge_count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        seed,
        spec_hash: spec_hash(spec),
        spec: spec.clone(),
        count,
        first_index: first,
        resample_px: opts.resample_px,
        samples,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Tags an error with the sample it came from, keeping its kind. I/O
/// errors already name the sample's file.
fn with_sample(index: usize, e: Error) -> Error {
    match e {
        Error::Parse { field, message } => Error::Parse {
            field,
            message: format!("sample {index}: {message}"),
        },
        Error::Invalid(m) => Error::Invalid(format!("sample {index}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("sample {index}: {m}")),
        io @ Error::Io { .. } => io,
    }
}

/// Reads every graph listed in a dataset manifest, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<SpatialGraph>)> {
    let manifest = Manifest::load(&dir.join("manifest.json"))?;
    let graphs = manifest
        .samples
        .par_iter()
        .map(|s| SpatialGraph::load(dir.join(&s.file)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, graphs))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
