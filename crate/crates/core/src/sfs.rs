//! Selective feature suppression.
//!
//! The layer makes a network's edge output agree with a discrete projection
//! while keeping a gradient path to the network. For every pair the
//! projection flipped, one of the two logits is overwritten with the
//! constant `-Λ`:
//!
//! * pair added by the projection (`E⁺`): `f⁻ := -Λ`, so `y ≈ [1, 0]`
//! * pair removed by the projection (`E⁻`): `f⁺ := -Λ`, so `y ≈ [0, 1]`
//!
//! The constant is detached, so the overwritten coordinate receives exactly
//! zero gradient and the surviving one receives the ordinary softmax
//! cross-entropy gradient of the constrained output.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeDelta, Membership};
use crate::mst::{project, EdgeProb, EdgeProbabilities, Projector};
use crate::pairs::{pair_count, pairs};

pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Suppression strength `Λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfsConfig {
    lambda: f64,
}

impl SfsConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if (-lambda).exp() == 0.0 {
            return Err(Error::invalid(format!(
                "lambda {lambda} underflows exp(-lambda) to zero"
            )));
        }
        Ok(SfsConfig { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `exp(-Λ)`, the weight the suppressed logit keeps after the softmax.
    pub fn suppressed_weight(&self) -> f64 {
        (-self.lambda).exp()
    }
}

impl Default for SfsConfig {
    fn default() -> Self {
        SfsConfig {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl fmt::Display for SfsConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lambda = {} (exp(-lambda) = {})",
            self.lambda,
            format_sci(self.suppressed_weight(), 2)
        )
    }
}

/// Formats `v` in scientific notation with `digits` significant digits,
/// e.g. `format_sci(4.54e-5, 2) == "4.5e-5"`.
pub fn format_sci(v: f64, digits: usize) -> String {
    let s = format!("{:.*e}", digits.saturating_sub(1), v);
    // Rust prints `4.5e-5`; normalize `1e0`-style exponents the same way.
    s.replace("e+", "e")
}

/// Pre-softmax features `[f⁺, f⁻]` for every pair, in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLogits {
    n: usize,
    feats: Vec<[f64; 2]>,
}

impl EdgeLogits {
    pub fn new(n: usize, feats: Vec<[f64; 2]>) -> Result<Self> {
        if feats.len() != pair_count(n) {
            return Err(Error::invalid(format!(
                "{} logit pairs for {n} nodes, expected {}",
                feats.len(),
                pair_count(n)
            )));
        }
        if let Some((e, f)) = pairs(n)
            .zip(&feats)
            .find(|(_, f)| !f.iter().all(|v| v.is_finite()))
        {
            return Err(Error::invalid(format!("non-finite logits {f:?} at {e}")));
        }
        Ok(EdgeLogits { n, feats })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.feats
    }

    pub fn iter(&self) -> impl Iterator<Item = (Edge, [f64; 2])> + '_ {
        pairs(self.n).zip(self.feats.iter().copied())
    }

    pub fn probabilities(&self) -> EdgeProbabilities {
        EdgeProbabilities::from_softmax(
            self.n,
            self.feats.iter().map(|&f| to_prob(softmax2(f))).collect(),
        )
    }
}

/// Two-way softmax with max subtraction.
pub fn softmax2(f: [f64; 2]) -> [f64; 2] {
    let m = f[0].max(f[1]);
    let a = (f[0] - m).exp();
    let b = (f[1] - m).exp();
    let z = a + b;
    [a / z, b / z]
}

/// Cross-entropy `-Σ t log softmax(f)` evaluated through log-sum-exp.
pub fn cross_entropy(f: [f64; 2], t: [f64; 2]) -> f64 {
    let m = f[0].max(f[1]);
    let lse = m + ((f[0] - m).exp() + (f[1] - m).exp()).ln();
    t[0] * (lse - f[0]) + t[1] * (lse - f[1])
}

fn to_prob(y: [f64; 2]) -> EdgeProb {
    EdgeProb {
        pos: y[0],
        neg: y[1],
    }
}

/// Which logit of a pair, if any, the layer replaced with `-Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suppression {
    None,
    /// `f⁺ := -Λ`; the pair is in `E⁻`.
    Existence,
    /// `f⁻ := -Λ`; the pair is in `E⁺`.
    NonExistence,
}

impl Suppression {
    pub fn for_membership(m: Membership) -> Self {
        match m {
            Membership::Unmodified => Suppression::None,
            Membership::Added => Suppression::NonExistence,
            Membership::Removed => Suppression::Existence,
        }
    }

    /// Index of the detached coordinate, if any.
    pub fn detached(&self) -> Option<usize> {
        match self {
            Suppression::None => None,
            Suppression::Existence => Some(0),
            Suppression::NonExistence => Some(1),
        }
    }

    /// Index of the logit that still depends on the network.
    pub fn surviving(&self) -> Option<usize> {
        self.detached().map(|k| 1 - k)
    }
}

/// The modified feature vector fed to the softmax.
pub fn suppress(f: [f64; 2], s: Suppression, lambda: f64) -> [f64; 2] {
    match s {
        Suppression::None => f,
        Suppression::Existence => [-lambda, f[1]],
        Suppression::NonExistence => [f[0], -lambda],
    }
}

/// Probability mass left on the suppressed class:
/// `ε = exp(-Λ) / (exp(f) + exp(-Λ))` for surviving logit `f`.
pub fn suppression_residual(surviving_logit: f64, lambda: f64) -> f64 {
    // sigmoid(-(f + Λ)) without overflow
    let z = surviving_logit + lambda;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Result of the forward pass.
#[derive(Debug, Clone)]
pub struct SfsOutput {
    /// `ỹ = softmax(f̃)`.
    pub unconstrained_probs: EdgeProbabilities,
    /// `y = softmax(f)` with `f` the suppressed features.
    pub constrained_probs: EdgeProbabilities,
    pub delta: EdgeDelta,
    pub suppression: Vec<Suppression>,
    /// Suppressed pairs whose surviving logit is `≤ -Λ`; for these the
    /// thresholded output may fail to reproduce the projection.
    pub floor_violations: Vec<Edge>,
}

fn check_delta(n: usize, delta: &EdgeDelta) -> Result<()> {
    if let Some(m) = delta.max_node() {
        if m >= n {
            return Err(Error::invalid(format!(
                "delta references node {m} but logits cover only {n} nodes"
            )));
        }
    }
    if let Some(e) = delta.added.intersection(&delta.removed).next() {
        return Err(Error::invalid(format!(
            "pair {e} is both added and removed"
        )));
    }
    Ok(())
}

/// Per-pair suppression pattern implied by `delta`, in storage order.
pub fn suppression_pattern(n: usize, delta: &EdgeDelta) -> Result<Vec<Suppression>> {
    check_delta(n, delta)?;
    let mut out = vec![Suppression::None; pair_count(n)];
    for e in &delta.added {
        out[crate::pairs::edge_index(n, e)] = Suppression::NonExistence;
    }
    for e in &delta.removed {
        out[crate::pairs::edge_index(n, e)] = Suppression::Existence;
    }
    Ok(out)
}

/// Applies the suppression implied by a precomputed `delta`.
///
/// The layer trusts that `delta` came from projecting `softmax(f)`; use
/// [`sfs_layer`] to run projection and suppression together.
pub fn sfs_forward(f: &EdgeLogits, delta: &EdgeDelta, cfg: &SfsConfig) -> Result<SfsOutput> {
    let n = f.node_count();
    let suppression = suppression_pattern(n, delta)?;
    let lambda = cfg.lambda();
    let mut constrained = Vec::with_capacity(suppression.len());
    let mut floor_violations = Vec::new();
    for ((e, feat), s) in f.iter().zip(&suppression) {
        if let Some(k) = s.surviving() {
            if feat[k] <= -lambda {
                floor_violations.push(e);
            }
        }
        constrained.push(to_prob(softmax2(suppress(feat, *s, lambda))));
    }
    Ok(SfsOutput {
        unconstrained_probs: f.probabilities(),
        constrained_probs: EdgeProbabilities::from_softmax(n, constrained),
        delta: delta.clone(),
        suppression,
        floor_violations,
    })
}

/// Softmax, spanning-tree projection and suppression in one step.
pub fn sfs_layer(f: &EdgeLogits, cfg: &SfsConfig) -> SfsOutput {
    let delta = project(&f.probabilities()).delta;
    sfs_forward(f, &delta, cfg).expect("projection delta is consistent with its logits")
}

pub fn sfs_layer_with<P: Projector + ?Sized>(
    projector: &P,
    f: &EdgeLogits,
    cfg: &SfsConfig,
) -> SfsOutput {
    let delta = crate::mst::project_with(projector, &f.probabilities()).delta;
    sfs_forward(f, &delta, cfg).expect("projection delta is consistent with its logits")
}

/// Ground truth `[t⁺, t⁻]`, one-hot.
pub type Target = [f64; 2];

pub fn target(exists: bool) -> Target {
    if exists {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

fn check_one_hot(e: &Edge, t: &Target) -> Result<()> {
    if *t == [1.0, 0.0] || *t == [0.0, 1.0] {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "target {t:?} at {e} is not one-hot"
        )))
    }
}

/// Exact gradient of `CE(softmax(suppress(f)), t)` with respect to the
/// unsuppressed features `f`.
pub fn pair_gradient(f: [f64; 2], s: Suppression, t: Target, lambda: f64) -> [f64; 2] {
    let y = softmax2(suppress(f, s, lambda));
    let mut g = [y[0] - t[0], y[1] - t[1]];
    if let Some(k) = s.detached() {
        g[k] = 0.0;
    }
    g
}

/// The `ε → 0` limit of [`pair_gradient`]: `[1 - t⁺, 0]` on `E⁺`,
/// `[0, 1 - t⁻]` on `E⁻`, the plain softmax gradient elsewhere.
pub fn approx_pair_gradient(f: [f64; 2], s: Suppression, t: Target) -> [f64; 2] {
    match s {
        Suppression::None => {
            let y = softmax2(f);
            [y[0] - t[0], y[1] - t[1]]
        }
        Suppression::NonExistence => [1.0 - t[0], 0.0],
        Suppression::Existence => [0.0, 1.0 - t[1]],
    }
}

fn check_targets(f: &EdgeLogits, targets: &[Target]) -> Result<()> {
    if targets.len() != f.as_slice().len() {
        return Err(Error::invalid(format!(
            "{} targets for {} pairs",
            targets.len(),
            f.as_slice().len()
        )));
    }
    for (e, t) in pairs(f.node_count()).zip(targets) {
        check_one_hot(&e, t)?;
    }
    Ok(())
}

/// Per-pair gradients `[∂L/∂f̃⁺, ∂L/∂f̃⁻]` of the summed constrained
/// cross-entropy.
pub fn sfs_backward(
    f: &EdgeLogits,
    delta: &EdgeDelta,
    targets: &[Target],
    cfg: &SfsConfig,
) -> Result<Vec<[f64; 2]>> {
    check_targets(f, targets)?;
    let suppression = suppression_pattern(f.node_count(), delta)?;
    Ok(f.as_slice()
        .iter()
        .zip(&suppression)
        .zip(targets)
        .map(|((&feat, &s), &t)| pair_gradient(feat, s, t, cfg.lambda()))
        .collect())
}

/// Summed cross-entropy of the constrained output, accumulated in storage
/// order.
pub fn constrained_loss(
    f: &EdgeLogits,
    delta: &EdgeDelta,
    targets: &[Target],
    cfg: &SfsConfig,
) -> Result<f64> {
    check_targets(f, targets)?;
    let suppression = suppression_pattern(f.node_count(), delta)?;
    Ok(f.as_slice()
        .iter()
        .zip(&suppression)
        .zip(targets)
        .map(|((&feat, &s), &t)| cross_entropy(suppress(feat, s, cfg.lambda()), t))
        .sum())
}

/// Shape of an approximate derivative in the case table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxDerivative {
    Zero,
    One,
    /// `y - 1` for the coordinate's own probability: strictly negative.
    ProbMinusOne,
    /// `y`: strictly positive.
    Prob,
}

impl ApproxDerivative {
    /// Whether `value` fits the expected shape. `eps` bounds the gap between
    /// the exact gradient and its `ε → 0` limit.
    pub fn admits(&self, value: f64, eps: f64) -> bool {
        // a few ulps of rounding on top of the analytic gap
        let eps = eps + 4.0 * f64::EPSILON;
        match self {
            ApproxDerivative::Zero => value.abs() <= eps,
            ApproxDerivative::One => (value - 1.0).abs() <= eps,
            ApproxDerivative::ProbMinusOne => value < 0.0 && value > -1.0,
            ApproxDerivative::Prob => value > 0.0 && value < 1.0,
        }
    }
}

/// One row of the eight-way case analysis of the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseRow {
    pub id: u8,
    /// `f̃⁺ > f̃⁻`.
    pub predicts_edge: bool,
    pub membership: Membership,
    pub target_exists: bool,
    pub derivatives: [ApproxDerivative; 2],
    /// Loss and gradient magnitudes become large.
    pub penalized: bool,
    pub description: &'static str,
}

use ApproxDerivative::{One, Prob, ProbMinusOne, Zero};

pub const CASE_TABLE: [CaseRow; 8] = [
    CaseRow {
        id: 1,
        predicts_edge: true,
        membership: Membership::Unmodified,
        target_exists: true,
        derivatives: [ProbMinusOne, Prob],
        penalized: false,
        description: "unmodified",
    },
    CaseRow {
        id: 2,
        predicts_edge: true,
        membership: Membership::Unmodified,
        target_exists: false,
        derivatives: [Prob, ProbMinusOne],
        penalized: true,
        description: "unmodified",
    },
    CaseRow {
        id: 3,
        predicts_edge: true,
        membership: Membership::Removed,
        target_exists: true,
        derivatives: [Zero, One],
        penalized: true,
        description: "projection incorrectly removed",
    },
    CaseRow {
        id: 4,
        predicts_edge: true,
        membership: Membership::Removed,
        target_exists: false,
        derivatives: [Zero, Zero],
        penalized: false,
        description: "projection correctly removed",
    },
    CaseRow {
        id: 5,
        predicts_edge: false,
        membership: Membership::Unmodified,
        target_exists: true,
        derivatives: [ProbMinusOne, Prob],
        penalized: true,
        description: "unmodified",
    },
    CaseRow {
        id: 6,
        predicts_edge: false,
        membership: Membership::Unmodified,
        target_exists: false,
        derivatives: [Prob, ProbMinusOne],
        penalized: false,
        description: "unmodified",
    },
    CaseRow {
        id: 7,
        predicts_edge: false,
        membership: Membership::Added,
        target_exists: true,
        derivatives: [Zero, Zero],
        penalized: false,
        description: "projection correctly added",
    },
    CaseRow {
        id: 8,
        predicts_edge: false,
        membership: Membership::Added,
        target_exists: false,
        derivatives: [One, Zero],
        penalized: true,
        description: "projection incorrectly added",
    },
];

/// Row of [`CASE_TABLE`] matching a pair's logits, projection membership
/// and target. Ties `f̃⁺ = f̃⁻` count as "no edge", as in thresholding.
pub fn classify_case(f: [f64; 2], membership: Membership, t: Target) -> Result<u8> {
    let e = Edge::new(0, 1).expect("literal pair");
    check_one_hot(&e, &t)?;
    let predicts_edge = f[0] > f[1];
    match (predicts_edge, membership) {
        (true, Membership::Added) => {
            return Err(Error::invalid(
                "pair already predicted as an edge cannot be added by the projection",
            ))
        }
        (false, Membership::Removed) => {
            return Err(Error::invalid(
                "pair not predicted as an edge cannot be removed by the projection",
            ))
        }
        _ => {}
    }
    let target_exists = t[0] == 1.0;
    let row = CASE_TABLE
        .iter()
        .find(|r| {
            r.predicts_edge == predicts_edge
                && r.membership == membership
                && r.target_exists == target_exists
        })
        .expect("table covers every consistent combination");
    Ok(row.id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edge_set;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax2([0.0, 0.0]), [0.5, 0.5]);
        let e3 = 3f64.exp();
        let y = softmax2([2.0, -1.0]);
        assert!((y[0] - e3 / (e3 + 1.0)).abs() < 1e-15);
        assert!((y[0] - 0.952_574_126_822_433_4).abs() < 1e-12);
        let y = softmax2([1000.0, 0.0]);
        assert_eq!(y[0], 1.0);
        assert!(y[1] >= 0.0 && y[1] < 1e-300);
    }

    #[test]
    fn lambda_table_values() {
        let show = |l: f64| format_sci(SfsConfig::new(l).unwrap().suppressed_weight(), 2);
        assert_eq!(show(2.0), "1.4e-1");
        assert_eq!(show(5.0), "6.7e-3");
        assert_eq!(show(10.0), "4.5e-5");
        assert_eq!(show(100.0), "3.7e-44");
        assert_eq!(
            SfsConfig::default().to_string(),
            "lambda = 10 (exp(-lambda) = 4.5e-5)"
        );
    }

    #[test]
    fn config_validation() {
        assert!(SfsConfig::new(0.0).is_err());
        assert!(SfsConfig::new(-1.0).is_err());
        assert!(SfsConfig::new(f64::NAN).is_err());
        assert!(SfsConfig::new(800.0).is_err());
        assert!(SfsConfig::new(700.0).is_ok());
    }

    #[test]
    fn empty_delta_is_identity() {
        let f = EdgeLogits::new(3, vec![[0.3, -0.2], [1.5, 2.0], [-4.0, 0.1]]).unwrap();
        let out = sfs_forward(&f, &EdgeDelta::default(), &SfsConfig::default()).unwrap();
        assert_eq!(out.constrained_probs, out.unconstrained_probs);
        assert!(out.suppression.iter().all(|s| *s == Suppression::None));
    }

    #[test]
    fn removed_pair_example() {
        let f = EdgeLogits::new(2, vec![[2.0, -1.0]]).unwrap();
        let delta = EdgeDelta {
            added: Default::default(),
            removed: edge_set([(0, 1)]),
        };
        let out = sfs_forward(&f, &delta, &SfsConfig::default()).unwrap();
        let y = out.constrained_probs.as_slice()[0];
        // softmax([-10, -1]) = [1/(1+e^9), e^9/(1+e^9)]
        let e9 = 9f64.exp();
        assert!((y.pos - 1.0 / (1.0 + e9)).abs() < 1e-15);
        assert!((y.pos - 1.2339e-4).abs() < 5e-9);
        assert!((y.neg - 0.99988).abs() < 5e-6);
        assert!(y.pos < y.neg);
    }

    #[test]
    fn delta_out_of_range() {
        let f = EdgeLogits::new(2, vec![[0.0, 0.0]]).unwrap();
        let delta = EdgeDelta {
            added: edge_set([(0, 3)]),
            removed: Default::default(),
        };
        assert!(sfs_forward(&f, &delta, &SfsConfig::default()).is_err());
    }

    #[test]
    fn backward_examples() {
        let lambda = DEFAULT_LAMBDA;
        let eps = suppression_residual(-0.5, lambda);
        let g = pair_gradient([-0.5, 0.5], Suppression::NonExistence, [1.0, 0.0], lambda);
        assert!(g[0].abs() <= eps && g[1] == 0.0);
        let g = pair_gradient([-0.5, 0.5], Suppression::NonExistence, [0.0, 1.0], lambda);
        assert!((g[0] - 1.0).abs() <= eps && g[1] == 0.0);

        // y = [0.7, 0.3] -> logit gap ln(7/3)
        let f = [(0.7f64 / 0.3).ln(), 0.0];
        let g = pair_gradient(f, Suppression::None, [1.0, 0.0], lambda);
        assert!((g[0] + 0.3).abs() < 1e-12 && (g[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_soft_targets() {
        let f = EdgeLogits::new(2, vec![[0.0, 0.0]]).unwrap();
        let err = sfs_backward(
            &f,
            &EdgeDelta::default(),
            &[[0.5, 0.5]],
            &SfsConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn residual_matches_softmax() {
        for f in [-5.0, 0.0, 3.0] {
            let y = softmax2([f, -10.0]);
            assert!((suppression_residual(f, 10.0) - y[1]).abs() < 1e-18);
        }
    }

    #[test]
    fn case_examples() {
        assert_eq!(
            classify_case([1.0, 0.0], Membership::Unmodified, [1.0, 0.0]).unwrap(),
            1
        );
        assert_eq!(
            classify_case([1.0, 0.0], Membership::Removed, [1.0, 0.0]).unwrap(),
            3
        );
        assert_eq!(
            classify_case([0.0, 1.0], Membership::Added, [1.0, 0.0]).unwrap(),
            7
        );
        assert_eq!(
            classify_case([0.0, 1.0], Membership::Added, [0.0, 1.0]).unwrap(),
            8
        );
        assert!(classify_case([1.0, 0.0], Membership::Added, [1.0, 0.0]).is_err());
        assert!(classify_case([0.0, 1.0], Membership::Removed, [1.0, 0.0]).is_err());
        assert!(classify_case([0.0, 1.0], Membership::Unmodified, [1.0, 1.0]).is_err());
    }

    #[test]
    fn layer_reproduces_projection() {
        let f = EdgeLogits::new(3, vec![[2.0, 0.0], [1.0, 0.0], [0.5, 0.0]]).unwrap();
        let out = sfs_layer(&f, &SfsConfig::default());
        assert_eq!(out.delta.removed, edge_set([(1, 2)]));
        assert_eq!(
            crate::mst::threshold_edges(&out.constrained_probs),
            edge_set([(0, 1), (0, 2)])
        );
    }
}
