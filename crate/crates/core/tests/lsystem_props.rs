mod common;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treecon::dataset::generate_sample;
use treecon::lsystem::{generate_tree, resample_nodes, rewrite, LSystemSpec, Sequence};
use treecon::metrics::keypoints;
use treecon::train::stream_rng;

#[test]
fn documented_rewrite_example() {
    let axiom = Sequence::parse("F0[+A0]F0[-A0]A0").unwrap();
    let rules = [Sequence::parse("F[-A]").unwrap()];
    let out = rewrite(&axiom, &rules, &mut ChaCha8Rng::seed_from_u64(99));
    assert_eq!(out.to_string(), "F0[+F1[-A1]]F0[-F1[-A1]]F1[-A1]");
}

#[test]
fn thousand_samples_are_valid_and_reproducible() {
    let grammar = LSystemSpec::default().compile().unwrap();
    let mut scales = Vec::new();
    let mut angles = Vec::new();
    for index in 0..1000u64 {
        let mut rng = stream_rng(5, index);
        let tree = generate_tree(&grammar, &mut rng).unwrap();
        let g = &tree.graph;
        assert!(g.is_tree());
        assert!(g.node_count() < 100);
        assert!(g
            .nodes()
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
        assert!(tree.iterations >= 1 && tree.iterations <= 3);
        assert!(tree.sequence.max_generation() <= tree.iterations);
        assert_eq!(g.node_count(), tree.sequence.segment_count() + 1);
        scales.extend(tree.trace.length_scales);
        angles.extend(tree.trace.turn_angles_deg);

        let again = generate_tree(&grammar, &mut stream_rng(5, index)).unwrap();
        assert_eq!(again.graph.to_json(), g.to_json());
    }
    assert!(scales.iter().all(|s| (0.5..=2.5).contains(s)));
    assert!(angles.iter().all(|a| (10.0..=35.0).contains(a)));
    // the draws actually spread over the ranges
    let lo = scales.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scales.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo < 0.6 && hi > 2.4, "{lo} {hi}");
}

#[test]
fn zero_iterations_keep_the_axiom() {
    let spec = LSystemSpec {
        max_iterations: 0,
        ..Default::default()
    };
    let grammar = spec.compile().unwrap();
    for index in 0..20 {
        let tree = generate_tree(&grammar, &mut stream_rng(1, index)).unwrap();
        assert_eq!(tree.iterations, 0);
        assert!(grammar.axioms.contains(&tree.sequence));
    }
}

#[test]
fn resampling_preserves_keypoints_and_geometry() {
    let grammar = LSystemSpec::default().compile().unwrap();
    let canvas = grammar.spec.canvas;
    for index in 0..200 {
        let g = generate_sample(&grammar, 3, index, None).unwrap();
        let r = resample_nodes(&g, 8.0, canvas).unwrap();
        assert!(r.is_tree());
        let key = |g: &treecon::SpatialGraph| {
            keypoints(g)
                .into_iter()
                .map(|(p, d)| (p.x.to_bits(), p.y.to_bits(), d))
                .collect::<BTreeSet<_>>()
        };
        assert_eq!(key(&r), key(&g));
        // chords never exceed the arc they replace
        assert!(r.total_length() <= g.total_length() * (1.0 + 1e-12));
        for e in r.edges() {
            assert!(r.edge_length(e) * canvas <= 8.0 * (1.0 + 1e-9));
        }
    }
}

#[test]
fn resampling_keeps_straight_length_exactly() {
    use treecon::graph::{Point, SpatialGraph};
    let straight = SpatialGraph::from_pairs(
        vec![
            Point::new(0.1, 0.5),
            Point::new(0.2, 0.5),
            Point::new(0.35, 0.5),
        ],
        [(0, 1), (1, 2)],
    )
    .unwrap();
    let r = resample_nodes(&straight, 8.0, 512.0).unwrap();
    assert!((r.total_length() - straight.total_length()).abs() < 1e-12);
    // 128 px at 8 px spacing
    assert_eq!(r.node_count(), 17);
}
