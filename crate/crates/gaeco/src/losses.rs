//! Inner-product decoder and the joint objective `L = L_r + beta * L_c`.
//!
//! Reconstruction is binary cross-entropy between the adjacency and
//! `sigmoid(Z Z^T)`, normalized by entry count. For graphs whose dense
//! target exceeds the configured cap, a sampled variant scores all positive
//! edges plus uniformly drawn non-edges. The clustering term is the mean
//! squared distance of each embedding to its nearest centroid, with the
//! centroids held constant on the tape.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cluster::Centroids;
use crate::graph::Graph;
use crate::tensor::{Matrix, Tape, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sampled reconstruction needs at least one edge")]
    NoEdges,
    #[error("beta must be non-negative, got {0}")]
    NegativeBeta(f64),
}

/// Per-epoch loss components. `l_total = l_recon + beta * l_clust`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub l_total: f64,
    pub l_recon: f64,
    pub l_clust: f64,
    pub beta: f64,
}

/// `A_hat = sigmoid(Z Z^T)`: symmetric, entries strictly in (0, 1).
pub fn decode(tape: &mut Tape, z: TensorId) -> Result<TensorId, LossError> {
    let logits = tape.matmul_nt(z, z)?;
    Ok(tape.sigmoid(logits)?)
}

/// Mean binary cross-entropy between the dense adjacency target and the
/// reconstruction, over all n^2 entries. `pos_weight` optionally reweights
/// the positive class.
pub fn recon_loss(
    tape: &mut Tape,
    target: Arc<Matrix>,
    a_hat: TensorId,
    pos_weight: Option<f64>,
) -> Result<TensorId, LossError> {
    Ok(tape.bce_mean(a_hat, target, pos_weight)?)
}

/// BCE over all positive edges plus `neg_per_pos` uniformly sampled
/// non-edges per positive, computed from embedding inner products.
/// Positives are the unique undirected edges; the target diagonal policy
/// adds the self-pairs when `diag_positive` is set.
pub fn sampled_recon_loss(
    tape: &mut Tape,
    graph: &Graph,
    z: TensorId,
    neg_per_pos: usize,
    diag_positive: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId, LossError> {
    let n = graph.node_count();
    let mut pairs: Vec<(usize, usize, f64)> = graph
        .undirected_edges()
        .into_iter()
        .map(|(i, j)| (i, j, 1.0))
        .collect();
    if diag_positive {
        for i in 0..n {
            pairs.push((i, i, 1.0));
        }
    }
    if pairs.is_empty() {
        return Err(LossError::NoEdges);
    }
    let positives = pairs.len();
    let max_attempts = 100 * neg_per_pos.max(1) * positives;
    let mut attempts = 0;
    let mut drawn = 0;
    // A complete graph has no non-edges; the loss then degrades to
    // positives-only.
    while drawn < neg_per_pos * positives && attempts < max_attempts {
        attempts += 1;
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j && diag_positive {
            continue;
        }
        if graph.has_edge(i, j) {
            continue;
        }
        if i == j && graph.has_self_loops() {
            // self-pair counts as positive under the aggregation policy,
            // never as a sampled negative
            continue;
        }
        pairs.push((i, j, 0.0));
        drawn += 1;
    }
    Ok(tape.sampled_bce(z, Arc::new(pairs))?)
}

/// Mean squared distance of each embedding row to its nearest centroid.
/// Gradient flows to `z` only.
pub fn kmeans_loss(
    tape: &mut Tape,
    z: TensorId,
    centroids: &Centroids,
) -> Result<TensorId, LossError> {
    Ok(tape.kmeans_loss(z, Arc::new(centroids.0.clone()))?)
}

/// `l_r + beta * l_c`, plus the report of both components.
pub fn total_loss(
    tape: &mut Tape,
    l_r: TensorId,
    l_c: TensorId,
    beta: f64,
) -> Result<(TensorId, LossReport), LossError> {
    if beta < 0.0 {
        return Err(LossError::NegativeBeta(beta));
    }
    let scaled = tape.scale(l_c, beta)?;
    let total = tape.add(l_r, scaled)?;
    let report = LossReport {
        epoch: 0,
        l_total: tape.value(total).data[0],
        l_recon: tape.value(l_r).data[0],
        l_clust: tape.value(l_c).data[0],
        beta,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::LOG_EPS;
    use rand::SeedableRng;

    fn sigma(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn decode_zero_embeddings_give_half() {
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::zeros(3, 4)).unwrap();
        let a_hat = decode(&mut tape, z).unwrap();
        assert!(tape.value(a_hat).data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn decode_orthonormal_rows() {
        let mut tape = Tape::new();
        let z = tape
            .leaf(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]))
            .unwrap();
        let a_hat = decode(&mut tape, z).unwrap();
        let v = tape.value(a_hat);
        assert!((v.get(0, 0) - 0.7310585786300049).abs() < 1e-12);
        assert!((v.get(1, 1) - 0.7310585786300049).abs() < 1e-12);
        assert_eq!(v.get(0, 1), 0.5);
        assert_eq!(v.get(1, 0), 0.5);
    }

    #[test]
    fn decode_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new();
        let z = tape
            .leaf(Matrix::from_vec(
                5,
                3,
                (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            ))
            .unwrap();
        let a_hat = decode(&mut tape, z).unwrap();
        let v = tape.value(a_hat);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(v.get(i, j), v.get(j, i));
                assert!(v.get(i, j) > 0.0 && v.get(i, j) < 1.0);
            }
        }
    }

    #[test]
    fn recon_loss_at_half_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::zeros(3, 2)).unwrap();
        let a_hat = decode(&mut tape, z).unwrap();
        let target = Arc::new(Matrix::from_vec(
            3,
            3,
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        ));
        let l = recon_loss(&mut tape, target, a_hat, None).unwrap();
        assert!((tape.value(l).data[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn recon_loss_perfect_reconstruction_is_tiny() {
        let mut tape = Tape::new();
        let target = Arc::new(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let probs = tape
            .leaf(Matrix::from_vec(
                2,
                2,
                vec![1.0 - LOG_EPS, LOG_EPS, LOG_EPS, 1.0 - LOG_EPS],
            ))
            .unwrap();
        let l = recon_loss(&mut tape, target, probs, None).unwrap();
        assert!(tape.value(l).data[0] < 1e-10);
    }

    #[test]
    fn recon_loss_scalar_case() {
        let mut tape = Tape::new();
        let target = Arc::new(Matrix::scalar(1.0));
        let probs = tape.leaf(Matrix::scalar(sigma(1.0))).unwrap();
        let l = recon_loss(&mut tape, target, probs, None).unwrap();
        assert!((tape.value(l).data[0] - (-sigma(1.0).ln())).abs() < 1e-12);
        assert!((tape.value(l).data[0] - 0.3132616875182228).abs() < 1e-10);
    }

    #[test]
    fn recon_loss_minimized_at_target() {
        let mut tape = Tape::new();
        let target = Arc::new(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let at_target = tape
            .leaf(Matrix::from_vec(
                2,
                2,
                vec![1.0 - LOG_EPS, LOG_EPS, LOG_EPS, 1.0 - LOG_EPS],
            ))
            .unwrap();
        let l_min = recon_loss(&mut tape, Arc::clone(&target), at_target, None).unwrap();
        let other = tape
            .leaf(Matrix::from_vec(2, 2, vec![0.9, 0.2, 0.1, 0.8]))
            .unwrap();
        let l_other = recon_loss(&mut tape, target, other, None).unwrap();
        assert!(tape.value(l_min).data[0] < tape.value(l_other).data[0]);
    }

    #[test]
    fn sampled_loss_is_reproducible_and_positive_only_on_complete_graph() {
        let g = Graph::build(4, &[(0, 1), (1, 2), (2, 3)], true).unwrap();
        let z_val = Matrix::from_vec(4, 2, vec![0.5, -0.25, 1.0, 0.0, -0.5, 0.75, 0.25, 0.25]);
        let eval = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let z = tape.leaf(z_val.clone()).unwrap();
            let l = sampled_recon_loss(&mut tape, &g, z, 3, true, &mut rng).unwrap();
            tape.value(l).data[0]
        };
        assert_eq!(eval(42), eval(42));

        // complete graph: no non-edges to sample
        let complete = Graph::build(3, &[(0, 1), (0, 2), (1, 2)], true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::zeros(3, 2)).unwrap();
        let l = sampled_recon_loss(&mut tape, &complete, z, 5, true, &mut rng).unwrap();
        // all-positive pairs at p = 0.5: loss is exactly ln 2
        assert!((tape.value(l).data[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sampled_loss_rejects_empty_graph() {
        let g = Graph::build(3, &[], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::zeros(3, 2)).unwrap();
        assert!(matches!(
            sampled_recon_loss(&mut tape, &g, z, 2, false, &mut rng),
            Err(LossError::NoEdges)
        ));
    }

    #[test]
    fn kmeans_loss_zero_when_on_centroids() {
        let mut tape = Tape::new();
        let z = tape
            .leaf(Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]))
            .unwrap();
        let c = Centroids(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let l = kmeans_loss(&mut tape, z, &c).unwrap();
        assert_eq!(tape.value(l).data[0], 0.0);
    }

    #[test]
    fn kmeans_loss_single_centroid_is_scatter() {
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::from_vec(3, 1, vec![0.0, 3.0, 6.0])).unwrap();
        let c = Centroids(Matrix::from_vec(1, 1, vec![3.0]));
        let l = kmeans_loss(&mut tape, z, &c).unwrap();
        assert!((tape.value(l).data[0] - 6.0).abs() < 1e-12); // (9 + 0 + 9) / 3
    }

    #[test]
    fn kmeans_loss_invariant_under_centroid_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z_val = Matrix::from_vec(5, 2, (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let c1 = Matrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 1.0, -1.0, 0.5]);
        let c2 = Matrix::from_vec(3, 2, vec![-1.0, 0.5, 0.0, 0.0, 1.0, 1.0]);
        let eval = |c: &Matrix| {
            let mut tape = Tape::new();
            let z = tape.leaf(z_val.clone()).unwrap();
            let l = kmeans_loss(&mut tape, z, &Centroids(c.clone())).unwrap();
            tape.value(l).data[0]
        };
        assert!((eval(&c1) - eval(&c2)).abs() < 1e-15);
    }

    #[test]
    fn total_loss_composition() {
        let mut tape = Tape::new();
        let l_r = tape.leaf(Matrix::scalar(0.6)).unwrap();
        let l_c = tape.leaf(Matrix::scalar(0.02)).unwrap();
        let (total, report) = total_loss(&mut tape, l_r, l_c, 10.0).unwrap();
        assert!((tape.value(total).data[0] - 0.8).abs() < 1e-12);
        assert!((report.l_total - (report.l_recon + report.beta * report.l_clust)).abs() < 1e-12);

        // beta = 0 is the no-clustering ablation
        let mut tape = Tape::new();
        let l_r = tape.leaf(Matrix::scalar(0.6)).unwrap();
        let l_c = tape.leaf(Matrix::scalar(123.0)).unwrap();
        let (total, _) = total_loss(&mut tape, l_r, l_c, 0.0).unwrap();
        assert_eq!(tape.value(total).data[0], 0.6);

        let mut tape = Tape::new();
        let l_r = tape.leaf(Matrix::scalar(0.6)).unwrap();
        let l_c = tape.leaf(Matrix::scalar(0.02)).unwrap();
        assert!(matches!(
            total_loss(&mut tape, l_r, l_c, -1.0),
            Err(LossError::NegativeBeta(_))
        ));
    }

    #[test]
    fn total_loss_gradient_through_both_terms() {
        // d/dZ of the joint loss matches finite differences on a tiny case.
        let z0 = Matrix::from_vec(2, 2, vec![0.3, -0.4, 0.8, 0.1]);
        let target = Arc::new(Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]));
        let centroids = Centroids(Matrix::from_vec(1, 2, vec![0.5, 0.5]));
        let beta = 2.5;
        let eval = |zv: &Matrix| {
            let mut tape = Tape::new();
            let z = tape.leaf(zv.clone()).unwrap();
            let a_hat = decode(&mut tape, z).unwrap();
            let l_r = recon_loss(&mut tape, Arc::clone(&target), a_hat, None).unwrap();
            let l_c = kmeans_loss(&mut tape, z, &centroids).unwrap();
            let (total, _) = total_loss(&mut tape, l_r, l_c, beta).unwrap();
            tape.value(total).data[0]
        };
        let mut tape = Tape::new();
        let z = tape.param(z0.clone()).unwrap();
        let a_hat = decode(&mut tape, z).unwrap();
        let l_r = recon_loss(&mut tape, Arc::clone(&target), a_hat, None).unwrap();
        let l_c = kmeans_loss(&mut tape, z, &centroids).unwrap();
        let (total, _) = total_loss(&mut tape, l_r, l_c, beta).unwrap();
        tape.backward(total).unwrap();
        let grad = tape.grad(z).unwrap().clone();

        let step = 1e-5;
        let mut zv = z0.clone();
        for k in 0..zv.data.len() {
            let orig = zv.data[k];
            zv.data[k] = orig + step;
            let up = eval(&zv);
            zv.data[k] = orig - step;
            let down = eval(&zv);
            zv.data[k] = orig;
            let fd = (up - down) / (2.0 * step);
            let rel = (grad.data[k] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel <= 1e-4, "entry {k}: analytic {} vs fd {fd}", grad.data[k]);
        }
    }
}
