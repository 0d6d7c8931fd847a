//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use rand::Rng;
use treecon::graph::{Edge, EdgeSet, Point};

/// Depth-first connectivity plus the edge count. The empty graph counts as
/// a tree.
pub fn dfs_is_tree(n: usize, edges: &EdgeSet) -> bool {
    if n == 0 {
        return edges.is_empty();
    }
    if edges.len() != n - 1 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.i()].push(e.j());
        adj[e.j()].push(e.i());
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.iter().all(|&s| s)
}

pub fn all_pairs(n: usize) -> Vec<Edge> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| Edge::new(i, j).unwrap()))
        .collect()
}

/// Minimum total cost over every spanning tree of the complete graph,
/// by enumerating all `(n-1)`-edge subsets.
pub fn brute_force_mst_cost(n: usize, cost: impl Fn(&Edge) -> f64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let pairs = all_pairs(n);
    let mut best = f64::INFINITY;
    let mut pick = Vec::with_capacity(n - 1);
    fn rec(
        pairs: &[Edge],
        start: usize,
        need: usize,
        n: usize,
        pick: &mut Vec<Edge>,
        cost: &dyn Fn(&Edge) -> f64,
        best: &mut f64,
    ) {
        if pick.len() == need {
            let set: EdgeSet = pick.iter().copied().collect();
            if dfs_is_tree(n, &set) {
                *best = best.min(pick.iter().map(cost).sum());
            }
            return;
        }
        for k in start..pairs.len() {
            pick.push(pairs[k]);
            rec(pairs, k + 1, need, n, pick, cost, best);
            pick.pop();
        }
    }
    rec(&pairs, 0, n - 1, n, &mut pick, &cost, &mut best);
    best
}

/// Heap's algorithm over all permutations.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| (0..n).map(|r| cost[r][p[r]]).sum::<f64>();
    let mut best = eval(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| Point::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)))
        .collect()
}

/// Five-point central difference of `f` at `x` along coordinate `k`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut at = |step: f64| {
        xp[k] = x[k] + step;
        f(&xp)
    };
    let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

/// Hidden pre-activations `W1 x + b1` of a scorer with the flat parameter
/// layout `w1 | b1 | ...`, one row per pair.
pub fn pre_activations(params: &[f64], hidden: usize, feats: &[[f64; 7]]) -> Vec<Vec<f64>> {
    let (w1, b1) = (&params[..hidden * 7], &params[hidden * 7..hidden * 8]);
    feats
        .iter()
        .map(|x| {
            (0..hidden)
                .map(|k| b1[k] + (0..7).map(|d| w1[k * 7 + d] * x[d]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Whether moving parameter `p` by up to `reach` can flip the sign of some
/// ReLU input, where the loss is not differentiable.
pub fn crosses_kink(
    p: usize,
    hidden: usize,
    feats: &[[f64; 7]],
    z: &[Vec<f64>],
    reach: f64,
) -> bool {
    let (unit, input) = if p < hidden * 7 {
        (p / 7, Some(p % 7))
    } else if p < hidden * 8 {
        (p - hidden * 7, None)
    } else {
        return false;
    };
    feats.iter().zip(z).any(|(x, zs)| {
        let scale = input.map_or(1.0, |d| x[d].abs());
        zs[unit].abs() <= reach * scale
    })
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
