//! Property tests: randomized invariants that must hold for arbitrary
//! well-formed inputs, not just the hand-picked oracle cases.

mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gaeco::cluster::{self, KmeansOptions};
use gaeco::graph::{Graph, Partition};
use gaeco::metrics;
use gaeco::tensor::{EdgeIndex, Matrix, Tape};

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;

/// Checks d(sum(op(x)))/dx against central finite differences entry-wise.
fn check_elementwise_grad(name: &str, xs: &[f64], op: impl Fn(&mut Tape, gaeco::tensor::TensorId) -> gaeco::tensor::TensorId) {
    let forward = |values: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::from_vec(1, values.len(), values.to_vec())).unwrap();
        let y = op(&mut tape, x);
        let s = tape.sum(y).unwrap();
        tape.value(s).data[0]
    };
    let mut tape = Tape::new();
    let x = tape.param(Matrix::from_vec(1, xs.len(), xs.to_vec())).unwrap();
    let y = op(&mut tape, x);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    let grad = tape.grad(x).expect("gradient exists").clone();

    for e in 0..xs.len() {
        let mut plus = xs.to_vec();
        plus[e] += FD_STEP;
        let mut minus = xs.to_vec();
        minus[e] -= FD_STEP;
        let fd = (forward(&plus) - forward(&minus)) / (2.0 * FD_STEP);
        let a = grad.data[e];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
        assert!(
            err <= FD_TOL,
            "{name} entry {e} (x={}): analytic {a} vs fd {fd}",
            xs[e]
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn elementwise_gradients_match_finite_differences(
        xs in prop::collection::vec(-3.0f64..3.0, 1..8),
        which in 0usize..5,
    ) {
        // Stay away from each op's kink so central differences are valid.
        let safe: Vec<f64> = xs.iter().map(|&v| if v.abs() < 0.05 { v + 0.1 } else { v }).collect();
        match which {
            0 => check_elementwise_grad("sigmoid", &safe, |t, x| t.sigmoid(x).unwrap()),
            1 => check_elementwise_grad("elu", &safe, |t, x| t.elu(x).unwrap()),
            2 => check_elementwise_grad("leaky_relu", &safe, |t, x| t.leaky_relu(x, 0.2).unwrap()),
            3 => check_elementwise_grad("square", &safe, |t, x| t.square(x).unwrap()),
            _ => check_elementwise_grad("exp", &safe, |t, x| t.exp(x).unwrap()),
        }
    }

    #[test]
    fn log_gradient_on_positive_inputs(
        xs in prop::collection::vec(0.1f64..5.0, 1..8),
    ) {
        check_elementwise_grad("log", &xs, |t, x| t.log(x).unwrap());
    }

    #[test]
    fn segment_softmax_sums_to_one_per_group(
        n in 2usize..12,
        edge_bits in prop::collection::vec(any::<bool>(), 66),
        scores_seed in any::<u64>(),
    ) {
        let mut edges = Vec::new();
        let mut idx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if edge_bits[idx % edge_bits.len()] {
                    edges.push((i, j));
                }
                idx += 1;
            }
        }
        let graph = Graph::build(n, &edges, true).unwrap();
        let index = Arc::new(EdgeIndex::from_graph(&graph));
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(scores_seed);
        let scores: Vec<f64> = (0..index.edge_count()).map(|_| rng.gen_range(-30.0..30.0)).collect();

        let mut tape = Tape::new();
        let s = tape.leaf(Matrix::from_vec(scores.len(), 1, scores)).unwrap();
        let alpha = tape.segment_softmax(s, &index).unwrap();
        let alpha = tape.value(alpha);
        for d in 0..n {
            let group = index.group(d);
            if group.is_empty() {
                continue;
            }
            let sum: f64 = group.map(|e| alpha.data[e]).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "node {d}: softmax sums to {sum}");
            let all_pos = index.group(d).all(|e| alpha.data[e] > 0.0);
            prop_assert!(all_pos, "attention weights must be positive");
        }
    }

    #[test]
    fn metric_invariances(
        labels_a in prop::collection::vec(0usize..5, 2..40),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let n = labels_a.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels_b: Vec<usize> = (0..n).map(|i| (labels_a[i] + i) % 3).collect();
        let pa = Partition::from_labels(labels_a.clone()).unwrap();
        let pb = Partition::from_labels(labels_b.clone()).unwrap();

        let nmi_ab = metrics::nmi(&pa, &pb).unwrap();
        let nmi_ba = metrics::nmi(&pb, &pa).unwrap();
        prop_assert!((nmi_ab - nmi_ba).abs() < 1e-12, "NMI must be symmetric");
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&nmi_ab), "NMI out of range: {nmi_ab}");

        let ari_ab = metrics::ari(&pa, &pb).unwrap();
        let ari_ba = metrics::ari(&pb, &pa).unwrap();
        prop_assert!((ari_ab - ari_ba).abs() < 1e-12, "ARI must be symmetric");

        // relabeling one side never changes either score
        let k = labels_b.iter().max().unwrap() + 1;
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let relabeled: Vec<usize> = labels_b.iter().map(|&l| perm[l]).collect();
        let pb2 = Partition::from_labels(relabeled).unwrap();
        prop_assert!((metrics::nmi(&pa, &pb2).unwrap() - nmi_ab).abs() < 1e-12);
        prop_assert!((metrics::ari(&pa, &pb2).unwrap() - ari_ab).abs() < 1e-12);

        prop_assert_eq!(metrics::nmi(&pa, &pa).unwrap(), 1.0);
        prop_assert_eq!(metrics::ari(&pa, &pa).unwrap(), 1.0);
    }

    #[test]
    fn kmeans_invariants(
        points_flat in prop::collection::vec(-10.0f64..10.0, 6..80),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let n = points_flat.len() / 2;
        let k = k.min(n);
        let points = Matrix::from_vec(n, 2, points_flat[..n * 2].to_vec());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let result = cluster::kmeans(&points, k, &mut rng, KmeansOptions::default()).unwrap();

        for w in result.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "inertia must not increase: {} -> {}", w[0], w[1]);
        }
        prop_assert!(result.assignment.labels().iter().all(|&l| l < k));
        prop_assert!(result.inertia >= 0.0);
        prop_assert_eq!(result.centroids.0.rows, k);
    }

    #[test]
    fn graph_build_invariants(
        n in 1usize..15,
        raw_edges in prop::collection::vec((0usize..15, 0usize..15), 0..40),
    ) {
        let edges: Vec<(usize, usize)> = raw_edges
            .into_iter()
            .map(|(a, b)| (a % n, b % n))
            .collect();
        let graph = Graph::build(n, &edges, true).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(graph.has_edge(i, j), graph.has_edge(j, i), "adjacency must be symmetric");
            }
            let nbrs = graph.neighbors(i).unwrap();
            prop_assert!(nbrs.windows(2).all(|w| w[0] < w[1]), "neighbor lists sorted and deduped");
            prop_assert!(nbrs.contains(&i), "self-loop policy adds the loop");
        }
    }
}
