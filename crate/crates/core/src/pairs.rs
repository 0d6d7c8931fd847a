//! Dense storage order for per-pair quantities: all `i < j` pairs in
//! lexicographic order.

use crate::graph::Edge;

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Position of the pair `(i, j)`, `i < j < n`, in lexicographic order.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

pub fn edge_index(n: usize, e: &Edge) -> usize {
    pair_index(n, e.i(), e.j())
}

/// Iterates all pairs of `0..n` in storage order.
pub fn pairs(n: usize) -> impl Iterator<Item = Edge> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| Edge::new(i, j).expect("i < j")))
}
