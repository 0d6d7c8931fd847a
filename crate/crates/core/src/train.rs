//! Training loop: scorer → projection → suppression → edge loss, optimized
//! with per-sample SGD and momentum.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeSet, Point, SpatialGraph};
use crate::metrics::{self, MetricsConfig};
use crate::mst::{project_with, threshold_edges, MstProjector, Projector};
use crate::pairs::pairs;
use crate::scorer::{
    all_pair_features, auto_pos_weight, edge_loss, LossBreakdown, ScorerModel, DEFAULT_HIDDEN,
    FEATURE_DIM,
};
use crate::sfs::{target, SfsConfig, Target, DEFAULT_LAMBDA};

/// Where the tree constraint is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    /// Plain thresholding in training and inference.
    Unconstrained,
    /// Unconstrained training, spanning-tree projection at inference.
    TestTime,
    /// Suppression layer in training and projection at inference.
    Ours,
    /// Suppression layer in training, thresholding at inference.
    TrainOnly,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 4] = [
        ConstraintMode::Unconstrained,
        ConstraintMode::TestTime,
        ConstraintMode::Ours,
        ConstraintMode::TrainOnly,
    ];

    pub fn constrains_training(&self) -> bool {
        matches!(self, ConstraintMode::Ours | ConstraintMode::TrainOnly)
    }

    pub fn projects_at_inference(&self) -> bool {
        matches!(self, ConstraintMode::Ours | ConstraintMode::TestTime)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintMode::Unconstrained => "unconstrained",
            ConstraintMode::TestTime => "test-time",
            ConstraintMode::Ours => "ours",
            ConstraintMode::TrainOnly => "train-only",
        }
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConstraintMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown mode `{s}`; expected unconstrained, test-time, ours or train-only"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Fixed positive-pair weight; `None` uses `#neg/#pos` clamped to
    /// `[1, 50]` per sample.
    pub pos_weight: Option<f64>,
    /// Standard deviation of the node perturbation, normalized units.
    pub noise_sigma: f64,
    pub hidden: usize,
    pub seed: u64,
    pub mode: ConstraintMode,
    pub metrics: MetricsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: DEFAULT_LAMBDA,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 100,
            pos_weight: None,
            noise_sigma: 0.005,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
            mode: ConstraintMode::Ours,
            metrics: MetricsConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<SfsConfig> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let Some(w) = self.pos_weight {
            positive("pos_weight", w)?;
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be at least 1"));
        }
        if self.metrics.k_points == 0 {
            return Err(Error::invalid("metrics.k_points must be at least 1"));
        }
        positive("metrics.topo_radius", self.metrics.topo_radius)?;
        SfsConfig::new(self.lambda)
    }
}

/// Seeded generator for one `(seed, stream)` pair; streams separate the
/// independent random decisions of a run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const NOISE_STREAM: u64 = 1 << 32;
const SHUFFLE_STREAM: u64 = 2 << 32;
const INIT_STREAM: u64 = 3 << 32;
const SPLIT_STREAM: u64 = 4 << 32;

/// A ground-truth graph with perturbed node positions and cached pair data.
#[derive(Debug, Clone)]
pub struct Sample {
    pub gt: SpatialGraph,
    /// Node positions seen by the scorer.
    pub nodes: Vec<Point>,
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub targets: Vec<Target>,
}

impl Sample {
    /// Perturbs the nodes with `N(0, σ²)` noise (clamped to the unit square)
    /// drawn from the stream of sample `index`.
    pub fn prepare(gt: SpatialGraph, sigma: f64, seed: u64, index: u64) -> Result<Sample> {
        let mut rng = stream_rng(seed, NOISE_STREAM + index);
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let nodes: Vec<Point> = gt
            .nodes()
            .iter()
            .map(|p| {
                let x = (p.x + noise.sample(&mut rng)).clamp(0.0, 1.0);
                let y = (p.y + noise.sample(&mut rng)).clamp(0.0, 1.0);
                Point::new(x, y)
            })
            .collect();
        Ok(Sample::with_nodes(gt, nodes))
    }

    /// Uses `nodes` as given, no perturbation.
    pub fn with_nodes(gt: SpatialGraph, nodes: Vec<Point>) -> Sample {
        let features = all_pair_features(&nodes);
        let targets = pairs(nodes.len())
            .map(|e| target(gt.edges().contains(&e)))
            .collect();
        Sample {
            gt,
            nodes,
            features,
            targets,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

pub fn prepare_samples(graphs: &[SpatialGraph], sigma: f64, seed: u64) -> Result<Vec<Sample>> {
    graphs
        .iter()
        .enumerate()
        .map(|(k, g)| Sample::prepare(g.clone(), sigma, seed, k as u64))
        .collect()
}

/// Seeded shuffle split into `(train, validation)` index lists. At least
/// one sample stays in training.
pub fn split_indices(count: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut stream_rng(seed, SPLIT_STREAM));
    let n_val = ((count as f64 * val_fraction).round() as usize).min(count.saturating_sub(1));
    let val = idx.split_off(count - n_val);
    (idx, val)
}

/// Per-epoch training record, one JSON line in the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_unconst: f64,
    pub l_const: f64,
    pub val_smd: f64,
    pub val_f1: f64,
    pub tree_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub model: ScorerModel,
    /// Parameters after the last epoch.
    pub last: ScorerModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("serialization is infallible") + "\n")
            .collect()
    }
}

/// Loss and gradient of one sample under the configured mode.
pub fn sample_step<P: Projector + ?Sized>(
    model: &ScorerModel,
    sample: &Sample,
    cfg: &TrainConfig,
    sfs: &SfsConfig,
    projector: &P,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let n = sample.node_count();
    let pos_weight = cfg
        .pos_weight
        .unwrap_or_else(|| auto_pos_weight(&sample.targets));
    let delta = if cfg.mode.constrains_training() {
        let logits = model.score_features(n, &sample.features)?;
        Some(project_with(projector, &logits.probabilities()).delta)
    } else {
        None
    };
    edge_loss(
        model,
        n,
        &sample.features,
        delta.as_ref(),
        &sample.targets,
        pos_weight,
        sfs,
    )
}

/// Predicted graph on `nodes`: thresholded edges, or their spanning-tree
/// projection.
pub fn infer(model: &ScorerModel, nodes: &[Point], project: bool) -> Result<SpatialGraph> {
    infer_with(model, nodes, project, &MstProjector)
}

pub fn infer_with<P: Projector + ?Sized>(
    model: &ScorerModel,
    nodes: &[Point],
    project: bool,
    projector: &P,
) -> Result<SpatialGraph> {
    let probs = model.score_edges(nodes)?.probabilities();
    let edges: EdgeSet = if project {
        projector.project(&probs)
    } else {
        threshold_edges(&probs)
    };
    Ok(SpatialGraph::new(nodes.to_vec(), edges).expect("inferred edges stay within the node set"))
}

/// Mean SMD, mean TOPO-F1 and tree rate of the model's predictions.
pub fn validate<P: Projector + Sync + ?Sized>(
    model: &ScorerModel,
    samples: &[Sample],
    mode: ConstraintMode,
    metrics_cfg: &MetricsConfig,
    projector: &P,
) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let pairs: Vec<(String, SpatialGraph, SpatialGraph)> = samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let pred = infer_with(model, &s.nodes, mode.projects_at_inference(), projector)?;
            Ok((k.to_string(), pred, s.gt.clone()))
        })
        .collect::<Result<_>>()?;
    let report = metrics::evaluate_pairs(&pairs, metrics_cfg)?;
    let a = report.aggregate;
    Ok((a.smd, a.topo_f1, a.tree_rate))
}

/// Trains a fresh model with Kruskal projection.
pub fn train(train_set: &[Sample], val_set: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train_set, val_set, cfg, &MstProjector)
}

/// Trains a fresh model. `projector` supplies the constrained edge set both
/// inside the loss and at validation time.
pub fn train_with<P: Projector + Sync + ?Sized>(
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    projector: &P,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = ScorerModel::random(cfg.hidden, &mut stream_rng(cfg.seed, INIT_STREAM));
    train_from(model, train_set, val_set, cfg, projector)
}

/// Continues training from `model`.
pub fn train_from<P: Projector + Sync + ?Sized>(
    mut model: ScorerModel,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    projector: &P,
) -> Result<TrainOutcome> {
    let sfs = cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if model.hidden() != cfg.hidden {
        return Err(Error::invalid("model width does not match the config"));
    }
    let mut velocity = vec![0.0; model.params().len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ScorerModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        let mut sum = LossBreakdown::default();
        for &k in &order {
            let (loss, grad) =
                sample_step(&model, &train_set[k], cfg, &sfs, projector).map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!(
                        "{msg} at epoch {epoch}, sample {k}; last good epoch {}",
                        epoch - 1
                    )),
                    other => other,
                })?;
            if !loss.l_edge().is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, sample {k}; last good epoch {}",
                    epoch - 1
                )));
            }
            sum.l_unconst += loss.l_unconst;
            sum.l_const += loss.l_const;
            for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Numerical(format!(
                    "parameters diverged at epoch {epoch}, sample {k}; last good epoch {}",
                    epoch - 1
                )));
            }
        }
        let count = train_set.len() as f64;
        let (val_smd, val_f1, tree_rate) =
            validate(&model, val_set, cfg.mode, &cfg.metrics, projector)?;
        log.push(EpochRecord {
            epoch,
            l_unconst: sum.l_unconst / count,
            l_const: sum.l_const / count,
            val_smd,
            val_f1,
            tree_rate,
        });
        let improved = match &best {
            None => true,
            Some((smd, _, _)) => val_smd < *smd,
        };
        if improved {
            best = Some((val_smd, epoch, model.clone()));
        }
    }
    let (best_model, best_epoch) = match best {
        // no validation data: keep the final parameters
        Some((smd, epoch, m)) if !smd.is_nan() => (m, epoch),
        _ => (model.clone(), cfg.epochs),
    };
    Ok(TrainOutcome {
        model: best_model,
        last: model,
        log,
        best_epoch,
    })
}
