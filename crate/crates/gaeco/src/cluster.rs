//! Seeded k-means over embeddings: k-means++ initialization, Lloyd
//! iterations with deterministic tie-breaking, restarts, and warm starts
//! for the per-epoch centroid refresh.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::Partition;
use crate::tensor::matrix::Matrix;
use crate::tensor::tape::nearest_centroid;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds point count {n}")]
    KExceedsN { k: usize, n: usize },
    #[error("centroid dimension {centroid} does not match point dimension {point}")]
    DimMismatch { centroid: usize, point: usize },
}

/// `K x d` matrix of cluster centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids(pub Matrix);

impl Centroids {
    pub fn k(&self) -> usize {
        self.0.rows
    }

    pub fn dim(&self) -> usize {
        self.0.cols
    }
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Centroids,
    pub assignment: Partition,
    /// Sum of squared distances to the assigned centers (unnormalized).
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step of the winning restart;
    /// non-increasing by Lloyd's argument.
    pub inertia_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct KmeansOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub n_init: usize,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

/// k-means++ seeding: first center uniform, every next center sampled with
/// probability proportional to its squared distance to the nearest chosen
/// center.
pub fn kmeans_pp_init(
    points: &Matrix,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Centroids, ClusterError> {
    validate(points, k)?;
    let n = points.rows;
    let mut centers = Matrix::zeros(k, points.cols);
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));

    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            // all remaining points coincide with a chosen center
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(chosen));
        for i in 0..n {
            let d = sq_dist(points.row(i), centers.row(c));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    Ok(Centroids(centers))
}

/// Best-of-`n_init` Lloyd k-means with k-means++ seeding.
pub fn kmeans(
    points: &Matrix,
    k: usize,
    rng: &mut ChaCha8Rng,
    opts: KmeansOptions,
) -> Result<KmeansResult, ClusterError> {
    validate(points, k)?;
    let mut best: Option<KmeansResult> = None;
    for _ in 0..opts.n_init.max(1) {
        let init = kmeans_pp_init(points, k, rng)?;
        let result = lloyd(points, init, opts.max_iter, opts.tol)?;
        let better = match &best {
            None => true,
            Some(b) => result.inertia < b.inertia,
        };
        if better {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Per-epoch centroid update: warm-start Lloyd from the previous centers
/// when available, otherwise a full restarted k-means.
pub fn refresh_centroids(
    points: &Matrix,
    k: usize,
    previous: Option<&Centroids>,
    rng: &mut ChaCha8Rng,
    opts: KmeansOptions,
) -> Result<Centroids, ClusterError> {
    match previous {
        Some(prev) => {
            if prev.dim() != points.cols {
                return Err(ClusterError::DimMismatch {
                    centroid: prev.dim(),
                    point: points.cols,
                });
            }
            validate(points, k)?;
            Ok(lloyd(points, prev.clone(), 300, 1e-6)?.centroids)
        }
        None => Ok(kmeans(points, k, rng, opts)?.centroids),
    }
}

/// Lloyd iterations from the given centers: assign (ties to the lowest
/// centroid index), recompute means, until the max center shift drops below
/// `tol` or `max_iter` is reached. Empty clusters are repaired by stealing
/// the point farthest from its assigned center.
pub fn lloyd(
    points: &Matrix,
    init: Centroids,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansResult, ClusterError> {
    let n = points.rows;
    let k = init.k();
    if init.dim() != points.cols {
        return Err(ClusterError::DimMismatch {
            centroid: init.dim(),
            point: points.cols,
        });
    }
    let mut centers = init.0;
    let mut assign = vec![0usize; n];
    let mut inertia;
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        inertia = 0.0;
        for i in 0..n {
            let (j, d2) = nearest_centroid(points.row(i), &centers);
            assign[i] = j;
            inertia += d2;
        }
        history.push(inertia);

        let mut sums = Matrix::zeros(k, points.cols);
        let mut counts = vec![0usize; k];
        for (i, &j) in assign.iter().enumerate() {
            counts[j] += 1;
            let row = sums.row_mut(j);
            for (o, &v) in row.iter_mut().zip(points.row(i).iter()) {
                *o += v;
            }
        }
        // Repair empty clusters before computing the means.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let stolen = farthest_point(points, &centers, &assign, &counts);
            let old = assign[stolen];
            counts[old] -= 1;
            let prow = points.row(stolen).to_vec();
            for (o, &v) in sums.row_mut(old).iter_mut().zip(prow.iter()) {
                *o -= v;
            }
            assign[stolen] = j;
            counts[j] = 1;
            sums.row_mut(j).copy_from_slice(&prow);
        }

        let mut shift: f64 = 0.0;
        for j in 0..k {
            let count = counts[j] as f64;
            let mut s2 = 0.0;
            for (c, &sum) in centers.row_mut(j).iter_mut().zip(sums.row(j).iter()) {
                let new = sum / count;
                let d = new - *c;
                s2 += d * d;
                *c = new;
            }
            shift = shift.max(s2.sqrt());
        }
        if shift < tol {
            break;
        }
    }

    // Final assignment against the converged centers.
    inertia = 0.0;
    for i in 0..n {
        let (j, d2) = nearest_centroid(points.row(i), &centers);
        assign[i] = j;
        inertia += d2;
    }
    history.push(inertia);

    Ok(KmeansResult {
        centroids: Centroids(centers),
        assignment: Partition::new(assign, k).expect("labels in range"),
        inertia,
        iterations,
        inertia_history: history,
    })
}

fn validate(points: &Matrix, k: usize) -> Result<(), ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if k > points.rows {
        return Err(ClusterError::KExceedsN { k, n: points.rows });
    }
    Ok(())
}

fn farthest_point(
    points: &Matrix,
    centers: &Matrix,
    assign: &[usize],
    counts: &[usize],
) -> usize {
    let mut best = (0usize, -1.0);
    for i in 0..points.rows {
        // only steal from clusters that keep at least one point
        if counts[assign[i]] <= 1 {
            continue;
        }
        let d2 = sq_dist(points.row(i), centers.row(assign[i]));
        if d2 > best.1 {
            best = (i, d2);
        }
    }
    best.0
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}
