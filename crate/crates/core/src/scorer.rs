//! Pairwise relation head: `f̃ = W2 · layernorm(relu(W1 x + b1)) + b2`,
//! with hand-written backpropagation.
//!
//! Parameters live in one flat vector so the optimizer and gradient checks
//! can treat the model as a point in `R^p`. Layout:
//! `w1 (H×7) | b1 (H) | ln_gain (H) | ln_bias (H) | w2 (2×H) | b2 (2)`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeDelta, Point};
use crate::pairs::{pair_count, pairs};
use crate::sfs::{
    cross_entropy, pair_gradient, suppress, suppression_pattern, EdgeLogits, SfsConfig,
    Suppression, Target,
};

pub const FEATURE_DIM: usize = 7;
pub const DEFAULT_HIDDEN: usize = 64;
const LN_EPS: f64 = 1e-5;

/// Upper and lower clamp on the automatic positive-pair weight.
pub const POS_WEIGHT_RANGE: (f64, f64) = (1.0, 50.0);

/// `[xᵢ, yᵢ, xⱼ, yⱼ, |xᵢ−xⱼ|, |yᵢ−yⱼ|, ‖pᵢ−pⱼ‖]` for `i < j`.
pub fn pair_features(nodes: &[Point], i: usize, j: usize) -> [f64; FEATURE_DIM] {
    let (a, b) = (nodes[i], nodes[j]);
    let dx = (a.x - b.x).abs();
    let dy = (a.y - b.y).abs();
    [a.x, a.y, b.x, b.y, dx, dy, dx.hypot(dy)]
}

/// Features for every pair in storage order.
pub fn all_pair_features(nodes: &[Point]) -> Vec<[f64; FEATURE_DIM]> {
    pairs(nodes.len())
        .map(|e| pair_features(nodes, e.i(), e.j()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    hidden: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    h: usize,
}

impl Layout {
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.h * FEATURE_DIM
    }
    fn gain(&self) -> usize {
        self.b1() + self.h
    }
    fn bias(&self) -> usize {
        self.gain() + self.h
    }
    fn w2(&self) -> usize {
        self.bias() + self.h
    }
    fn b2(&self) -> usize {
        self.w2() + 2 * self.h
    }
    fn len(&self) -> usize {
        self.b2() + 2
    }
}

/// Intermediate activations of one pair, kept for the backward pass.
struct PairTrace {
    pre: Vec<f64>,
    normalized: Vec<f64>,
    inv_std: f64,
}

impl ScorerModel {
    pub fn param_count_for(hidden: usize) -> usize {
        Layout { h: hidden }.len()
    }

    /// All weights and biases zero, layer-norm gain one.
    pub fn zeros(hidden: usize) -> Self {
        let l = Layout { h: hidden };
        let mut params = vec![0.0; l.len()];
        params[l.gain()..l.bias()].fill(1.0);
        ScorerModel { hidden, params }
    }

    /// He-style initialization for the hidden layer, `1/√H` scale for the
    /// output layer.
    pub fn random<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let mut m = ScorerModel::zeros(hidden);
        let l = m.layout();
        let w1 = Normal::new(0.0, (2.0 / FEATURE_DIM as f64).sqrt()).expect("valid std");
        for v in &mut m.params[l.w1()..l.b1()] {
            *v = w1.sample(rng);
        }
        for v in &mut m.params[l.b1()..l.gain()] {
            *v = rng.random_range(-0.1..0.1);
        }
        let w2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("valid std");
        for v in &mut m.params[l.w2()..l.b2()] {
            *v = w2.sample(rng);
        }
        m
    }

    pub fn from_params(hidden: usize, params: Vec<f64>) -> Result<Self> {
        let expected = ScorerModel::param_count_for(hidden);
        if hidden == 0 || params.len() != expected {
            return Err(Error::invalid(format!(
                "{} parameters for hidden width {hidden}, expected {expected}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite model parameter"));
        }
        Ok(ScorerModel { hidden, params })
    }

    fn layout(&self) -> Layout {
        Layout { h: self.hidden }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_pair(&self, x: &[f64; FEATURE_DIM], trace: Option<&mut PairTrace>) -> [f64; 2] {
        let l = self.layout();
        let h = self.hidden;
        let p = &self.params;
        let w1 = &p[l.w1()..l.b1()];
        let b1 = &p[l.b1()..l.gain()];

        let mut act = vec![0.0; h];
        let mut pre = vec![0.0; h];
        for k in 0..h {
            let row = &w1[k * FEATURE_DIM..(k + 1) * FEATURE_DIM];
            let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[k];
            pre[k] = z;
            act[k] = z.max(0.0);
        }
        let mean = act.iter().sum::<f64>() / h as f64;
        let var = act.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / h as f64;
        let inv_std = 1.0 / (var + LN_EPS).sqrt();

        let gain = &p[l.gain()..l.bias()];
        let bias = &p[l.bias()..l.w2()];
        let w2 = &p[l.w2()..l.b2()];
        let b2 = &p[l.b2()..];
        let mut out = [b2[0], b2[1]];
        let mut normalized = vec![0.0; h];
        for k in 0..h {
            let xhat = (act[k] - mean) * inv_std;
            normalized[k] = xhat;
            let hk = gain[k] * xhat + bias[k];
            out[0] += w2[k] * hk;
            out[1] += w2[h + k] * hk;
        }
        if let Some(t) = trace {
            *t = PairTrace {
                pre,
                normalized,
                inv_std,
            };
        }
        out
    }

    /// Logits `f̃` for every pair of `nodes`. Fails if the parameters
    /// produce non-finite logits.
    pub fn score_edges(&self, nodes: &[Point]) -> Result<EdgeLogits> {
        let feats = all_pair_features(nodes);
        self.score_features(nodes.len(), &feats)
    }

    pub fn score_features(&self, n: usize, feats: &[[f64; FEATURE_DIM]]) -> Result<EdgeLogits> {
        let logits = feats.iter().map(|x| self.forward_pair(x, None)).collect();
        EdgeLogits::new(n, logits).map_err(|e| Error::Numerical(e.to_string()))
    }

    /// Accumulates `∂L/∂θ` given `∂L/∂f̃` for each pair.
    pub fn backward(&self, feats: &[[f64; FEATURE_DIM]], logit_grads: &[[f64; 2]]) -> Vec<f64> {
        let l = self.layout();
        let h = self.hidden;
        let mut grad = vec![0.0; l.len()];
        let mut trace = PairTrace {
            pre: Vec::new(),
            normalized: Vec::new(),
            inv_std: 0.0,
        };
        let mut dxhat = vec![0.0; h];
        for (x, df) in feats.iter().zip(logit_grads) {
            if df[0] == 0.0 && df[1] == 0.0 {
                continue;
            }
            self.forward_pair(x, Some(&mut trace));
            let p = &self.params;
            let gain = &p[l.gain()..l.bias()];
            let bias = &p[l.bias()..l.w2()];
            let w2 = &p[l.w2()..l.b2()];

            grad[l.b2()] += df[0];
            grad[l.b2() + 1] += df[1];
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for k in 0..h {
                let xhat = trace.normalized[k];
                let hk = gain[k] * xhat + bias[k];
                grad[l.w2() + k] += df[0] * hk;
                grad[l.w2() + h + k] += df[1] * hk;
                let dh = df[0] * w2[k] + df[1] * w2[h + k];
                grad[l.gain() + k] += dh * xhat;
                grad[l.bias() + k] += dh;
                dxhat[k] = dh * gain[k];
                mean_d += dxhat[k];
                mean_dx += dxhat[k] * xhat;
            }
            mean_d /= h as f64;
            mean_dx /= h as f64;
            for k in 0..h {
                if trace.pre[k] <= 0.0 {
                    continue;
                }
                let dz = trace.inv_std * (dxhat[k] - mean_d - trace.normalized[k] * mean_dx);
                grad[l.b1() + k] += dz;
                let row = &mut grad[l.w1() + k * FEATURE_DIM..l.w1() + (k + 1) * FEATURE_DIM];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += dz * v;
                }
            }
        }
        grad
    }

    pub fn to_json(&self) -> String {
        let l = self.layout();
        let h = self.hidden;
        let p = &self.params;
        let file = ModelFile {
            arch: Arch {
                input: FEATURE_DIM,
                hidden: h,
            },
            w1: p[l.w1()..l.b1()]
                .chunks(FEATURE_DIM)
                .map(<[f64]>::to_vec)
                .collect(),
            b1: p[l.b1()..l.gain()].to_vec(),
            ln_gain: p[l.gain()..l.bias()].to_vec(),
            ln_bias: p[l.bias()..l.w2()].to_vec(),
            w2: p[l.w2()..l.b2()].chunks(h).map(<[f64]>::to_vec).collect(),
            b2: p[l.b2()..].to_vec(),
        };
        serde_json::to_string(&file).expect("serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::parse("<document>", e.to_string()))?;
        let h = f.arch.hidden;
        if f.arch.input != FEATURE_DIM {
            return Err(Error::parse(
                "arch.in",
                format!("expected {FEATURE_DIM}, got {}", f.arch.input),
            ));
        }
        let check = |field: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::parse(
                    field,
                    format!("expected length {want}, got {got}"),
                ))
            }
        };
        check("w1", f.w1.len(), h)?;
        for (k, row) in f.w1.iter().enumerate() {
            check(&format!("w1[{k}]"), row.len(), FEATURE_DIM)?;
        }
        check("b1", f.b1.len(), h)?;
        check("ln_gain", f.ln_gain.len(), h)?;
        check("ln_bias", f.ln_bias.len(), h)?;
        check("w2", f.w2.len(), 2)?;
        for (k, row) in f.w2.iter().enumerate() {
            check(&format!("w2[{k}]"), row.len(), h)?;
        }
        check("b2", f.b2.len(), 2)?;
        let params: Vec<f64> =
            f.w1.into_iter()
                .flatten()
                .chain(f.b1)
                .chain(f.ln_gain)
                .chain(f.ln_bias)
                .chain(f.w2.into_iter().flatten())
                .chain(f.b2)
                .collect();
        ScorerModel::from_params(h, params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScorerModel::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    arch: Arch,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    ln_gain: Vec<f64>,
    ln_bias: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Arch {
    #[serde(rename = "in")]
    input: usize,
    hidden: usize,
}

/// The two terms of the edge loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_unconst: f64,
    pub l_const: f64,
}

impl LossBreakdown {
    pub fn l_edge(&self) -> f64 {
        self.l_unconst + self.l_const
    }
}

/// Weight of positive pairs: `#neg / #pos` clamped to [`POS_WEIGHT_RANGE`],
/// or 1 when there are no positives.
pub fn auto_pos_weight(targets: &[Target]) -> f64 {
    let pos = targets.iter().filter(|t| t[0] == 1.0).count();
    let neg = targets.len() - pos;
    if pos == 0 {
        return 1.0;
    }
    (neg as f64 / pos as f64).clamp(POS_WEIGHT_RANGE.0, POS_WEIGHT_RANGE.1)
}

/// Edge loss on logits: weighted mean cross-entropy of `softmax(f̃)` and,
/// when `delta` is given, of the suppressed output. Returns the loss terms
/// and `∂L/∂f̃` per pair.
pub fn logit_loss(
    logits: &EdgeLogits,
    delta: Option<&EdgeDelta>,
    targets: &[Target],
    pos_weight: f64,
    cfg: &SfsConfig,
) -> Result<(LossBreakdown, Vec<[f64; 2]>)> {
    let n = logits.node_count();
    if targets.len() != pair_count(n) {
        return Err(Error::invalid(format!(
            "{} targets for {} pairs",
            targets.len(),
            pair_count(n)
        )));
    }
    if let Some(t) = targets
        .iter()
        .find(|t| **t != [1.0, 0.0] && **t != [0.0, 1.0])
    {
        return Err(Error::invalid(format!("target {t:?} is not one-hot")));
    }
    let suppression = match delta {
        Some(d) => Some(suppression_pattern(n, d)?),
        None => None,
    };
    let weight = |t: &Target| if t[0] == 1.0 { pos_weight } else { 1.0 };
    let total_weight: f64 = targets.iter().map(weight).sum();
    if total_weight == 0.0 {
        return Ok((LossBreakdown::default(), Vec::new()));
    }

    let lambda = cfg.lambda();
    let mut loss = LossBreakdown::default();
    let mut grads = Vec::with_capacity(targets.len());
    for (k, (&f, t)) in logits.as_slice().iter().zip(targets).enumerate() {
        let w = weight(t) / total_weight;
        loss.l_unconst += w * cross_entropy(f, *t);
        let mut g = pair_gradient(f, Suppression::None, *t, lambda);
        if let Some(s) = &suppression {
            loss.l_const += w * cross_entropy(suppress(f, s[k], lambda), *t);
            let gc = pair_gradient(f, s[k], *t, lambda);
            g = [g[0] + gc[0], g[1] + gc[1]];
        }
        grads.push([w * g[0], w * g[1]]);
    }
    Ok((loss, grads))
}

/// Full edge loss and parameter gradient for one sample, with the
/// projection delta held fixed.
pub fn edge_loss(
    model: &ScorerModel,
    n: usize,
    feats: &[[f64; FEATURE_DIM]],
    delta: Option<&EdgeDelta>,
    targets: &[Target],
    pos_weight: f64,
    cfg: &SfsConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let logits = model.score_features(n, feats)?;
    let (loss, logit_grads) = logit_loss(&logits, delta, targets, pos_weight, cfg)?;
    let grads = if logit_grads.is_empty() {
        vec![0.0; model.params.len()]
    } else {
        model.backward(feats, &logit_grads)
    };
    Ok((loss, grads))
}
