//! Finite-difference verification of the analytic gradients and of the
//! eight-way case analysis of the suppression layer.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{Edge, EdgeDelta, Membership, Point};
use crate::mst::project;
use crate::pairs::pair_count;
use crate::scorer::{all_pair_features, auto_pos_weight, edge_loss, ScorerModel, FEATURE_DIM};
use crate::sfs::{
    classify_case, constrained_loss, pair_gradient, sfs_backward, suppression_residual, target,
    ApproxDerivative, EdgeLogits, SfsConfig, Suppression, Target, CASE_TABLE,
};
use crate::train::stream_rng;

pub const TOLERANCE: f64 = 1e-6;
/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-6;
const LOGIT_STEP: f64 = 1e-2;
const PARAM_STEP: f64 = 1e-3;
const NODES: usize = 6;

const LAYER_STREAM: u64 = 6 << 32;
const MODEL_STREAM: u64 = 7 << 32;
const CASE_STREAM: u64 = 8 << 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Random instances for each of the two checks.
    pub instances: usize,
    /// Instances per case-table row.
    pub case_instances: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances: 1000,
            case_instances: 200,
            hidden: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseVerdict {
    pub id: u8,
    pub description: &'static str,
    pub expected: [String; 2],
    pub instances: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub lambda: f64,
    pub layer_max_rel_err: f64,
    pub model_max_rel_err: f64,
    /// Parameter coordinates skipped because a step could cross a ReLU kink.
    pub skipped_coordinates: usize,
    pub checked_coordinates: usize,
    pub cases: Vec<CaseVerdict>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.layer_max_rel_err.max(self.model_max_rel_err)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

fn five_point(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut at = |step: f64| {
        xp[k] = x[k] + step;
        f(&xp)
    };
    let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

fn logits(n: usize, x: &[f64]) -> EdgeLogits {
    EdgeLogits::new(n, x.chunks(2).map(|c| [c[0], c[1]]).collect()).expect("finite draws")
}

fn random_targets<R: Rng>(rng: &mut R, m: usize) -> Vec<Target> {
    (0..m).map(|_| target(rng.random_bool(0.3))).collect()
}

/// Layer gradients against the summed constrained cross-entropy.
fn layer_instance(seed: u64, index: usize, cfg: &SfsConfig) -> Result<f64> {
    let mut rng = stream_rng(seed, LAYER_STREAM + index as u64);
    let n = rng.random_range(2..=7);
    let m = pair_count(n);
    let x: Vec<f64> = (0..2 * m).map(|_| rng.random_range(-4.0..4.0)).collect();
    let targets = random_targets(&mut rng, m);
    let delta = project(&logits(n, &x).probabilities()).delta;
    let grad = sfs_backward(&logits(n, &x), &delta, &targets, cfg)?;
    let mut loss = |x: &[f64]| {
        constrained_loss(&logits(n, x), &delta, &targets, cfg).expect("validated above")
    };
    Ok((0..2 * m)
        .map(|k| rel_err(grad[k / 2][k % 2], five_point(&mut loss, &x, k, LOGIT_STEP)))
        .fold(0.0, f64::max))
}

/// Whether moving parameter `p` can flip the sign of some ReLU input.
fn near_kink(
    p: usize,
    hidden: usize,
    feats: &[[f64; FEATURE_DIM]],
    params: &[f64],
    reach: f64,
) -> bool {
    let (unit, input) = if p < hidden * FEATURE_DIM {
        (p / FEATURE_DIM, Some(p % FEATURE_DIM))
    } else if p < hidden * (FEATURE_DIM + 1) {
        (p - hidden * FEATURE_DIM, None)
    } else {
        return false;
    };
    let row = &params[unit * FEATURE_DIM..(unit + 1) * FEATURE_DIM];
    let bias = params[hidden * FEATURE_DIM + unit];
    feats.iter().any(|x| {
        let z = bias + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        z.abs() <= reach * input.map_or(1.0, |d| x[d].abs())
    })
}

/// End-to-end parameter gradients of the edge loss on a random 6-node
/// instance; every fourth instance omits the constrained term.
fn model_instance(
    seed: u64,
    index: usize,
    hidden: usize,
    cfg: &SfsConfig,
) -> Result<(f64, usize, usize)> {
    let mut rng = stream_rng(seed, MODEL_STREAM + index as u64);
    let nodes: Vec<Point> = (0..NODES)
        .map(|_| Point::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)))
        .collect();
    let feats = all_pair_features(&nodes);
    let mut model = ScorerModel::random(hidden, &mut rng);
    for p in model.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let targets = random_targets(&mut rng, pair_count(NODES));
    let pos_weight = auto_pos_weight(&targets);
    let delta = if index.is_multiple_of(4) {
        None
    } else {
        Some(project(&model.score_features(NODES, &feats)?.probabilities()).delta)
    };
    let (_, grad) = edge_loss(
        &model,
        NODES,
        &feats,
        delta.as_ref(),
        &targets,
        pos_weight,
        cfg,
    )?;
    let x = model.params().to_vec();
    let mut loss = |x: &[f64]| {
        let m = ScorerModel::from_params(hidden, x.to_vec()).expect("same layout");
        edge_loss(&m, NODES, &feats, delta.as_ref(), &targets, pos_weight, cfg)
            .map(|(l, _)| l.l_edge())
            .unwrap_or(f64::NAN)
    };
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for (k, &g) in grad.iter().enumerate() {
        if near_kink(k, hidden, &feats, &x, 2.0 * PARAM_STEP) {
            skipped += 1;
            continue;
        }
        worst = worst.max(rel_err(g, five_point(&mut loss, &x, k, PARAM_STEP)));
        checked += 1;
    }
    Ok((worst, checked, skipped))
}

fn norm(g: [f64; 2]) -> f64 {
    g[0].hypot(g[1])
}

/// Random instances of one case-table row: classification, derivative
/// shapes and, for the penalized flipped cases, the gradient-norm
/// comparison against the unconstrained loss.
fn case_verdict(row_index: usize, gc: &GradcheckConfig, cfg: &SfsConfig) -> Result<CaseVerdict> {
    let row = CASE_TABLE[row_index];
    let mut rng = stream_rng(gc.seed, CASE_STREAM + row_index as u64);
    let lambda = cfg.lambda();
    let pair = Edge::new(0, 1).expect("literal pair");
    let mut pass = true;
    for _ in 0..gc.case_instances {
        let f = loop {
            let f = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            if (f[0] > f[1]) == row.predicts_edge {
                break f;
            }
        };
        let t = target(row.target_exists);
        pass &= classify_case(f, row.membership, t)? == row.id;
        let mut delta = EdgeDelta::default();
        match row.membership {
            Membership::Added => delta.added.insert(pair),
            Membership::Removed => delta.removed.insert(pair),
            Membership::Unmodified => false,
        };
        let g = sfs_backward(&EdgeLogits::new(2, vec![f])?, &delta, &[t], cfg)?[0];
        let s = Suppression::for_membership(row.membership);
        let eps = s
            .surviving()
            .map_or(0.0, |k| suppression_residual(f[k], lambda));
        pass &= row.derivatives.iter().zip(g).all(|(d, v)| d.admits(v, eps));
        if let Some(k) = s.detached() {
            pass &= g[k] == 0.0;
        }
        if row.penalized && row.membership != Membership::Unmodified {
            let k = s.surviving().expect("flipped rows keep one logit");
            let plain = norm(pair_gradient(f, Suppression::None, t, lambda));
            pass &= norm(g) >= 1.0 - (-lambda).exp() * (-f[k]).exp();
            pass &= norm(g) > plain && plain < 0.5f64.sqrt();
        }
    }
    let shape = |d: &ApproxDerivative| {
        match d {
            ApproxDerivative::Zero => "0",
            ApproxDerivative::One => "1",
            ApproxDerivative::ProbMinusOne => "y-1",
            ApproxDerivative::Prob => "y",
        }
        .to_string()
    };
    Ok(CaseVerdict {
        id: row.id,
        description: row.description,
        expected: [shape(&row.derivatives[0]), shape(&row.derivatives[1])],
        instances: gc.case_instances,
        pass,
    })
}

pub fn run(gc: &GradcheckConfig, cfg: &SfsConfig) -> Result<GradcheckReport> {
    let layer = (0..gc.instances)
        .into_par_iter()
        .map(|i| layer_instance(gc.seed, i, cfg))
        .collect::<Result<Vec<_>>>()?;
    let model = (0..gc.instances)
        .into_par_iter()
        .map(|i| model_instance(gc.seed, i, gc.hidden, cfg))
        .collect::<Result<Vec<_>>>()?;
    let cases = (0..CASE_TABLE.len())
        .map(|r| case_verdict(r, gc, cfg))
        .collect::<Result<Vec<_>>>()?;
    let layer_max_rel_err = layer.iter().copied().fold(0.0, f64::max);
    let model_max_rel_err = model.iter().map(|m| m.0).fold(0.0, f64::max);
    let checked_coordinates = model.iter().map(|m| m.1).sum();
    let skipped_coordinates = model.iter().map(|m| m.2).sum();
    let pass = layer_max_rel_err <= TOLERANCE
        && model_max_rel_err <= TOLERANCE
        && cases.iter().all(|c| c.pass);
    Ok(GradcheckReport {
        lambda: cfg.lambda(),
        layer_max_rel_err,
        model_max_rel_err,
        skipped_coordinates,
        checked_coordinates,
        cases,
        tolerance: TOLERANCE,
        pass,
    })
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "case  d/df+  d/df-  verdict  description")?;
        for c in &self.cases {
            writeln!(
                f,
                "{:>4}  {:>5}  {:>5}  {:>7}  {}",
                c.id,
                c.expected[0],
                c.expected[1],
                if c.pass { "ok" } else { "FAIL" },
                c.description
            )?;
        }
        let passed = self.cases.iter().filter(|c| c.pass).count();
        writeln!(f, "case rows: {passed}/{}", self.cases.len())?;
        writeln!(f, "layer max rel err: {:.2e}", self.layer_max_rel_err)?;
        writeln!(
            f,
            "model max rel err: {:.2e} ({} coordinates, {} skipped at ReLU kinks)",
            self.model_max_rel_err, self.checked_coordinates, self.skipped_coordinates
        )?;
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let cmp = if self.max_rel_err() <= self.tolerance {
            "≤"
        } else {
            ">"
        };
        write!(
            f,
            "{verdict}, max rel err {:.2e} {cmp} {:.0e}",
            self.max_rel_err(),
            self.tolerance
        )
    }
}
