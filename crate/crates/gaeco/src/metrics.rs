//! NMI and ARI between a ground-truth and a detected partition.
//!
//! Both metrics are computed exactly from the contingency table, with the
//! convention `0 * log(..) = 0` and natural logarithms (the base cancels in
//! the ratio). Degenerate denominators: two identical trivial clusterings
//! score 1.0.

use thiserror::Error;

use crate::graph::Partition;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("partition lengths differ: {truth} vs {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("ARI needs at least 2 nodes, got {n}")]
    TooFewNodes { n: usize },
}

/// Co-membership counts `n_ij` between truth community `i` and detected
/// community `j`, with row sums, column sums, and the total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

pub fn contingency(truth: &Partition, pred: &Partition) -> Result<ContingencyTable, MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let k = truth.k();
    let k_star = pred.k();
    let mut counts = vec![vec![0u64; k_star]; k];
    for (&t, &p) in truth.labels().iter().zip(pred.labels().iter()) {
        counts[t][p] += 1;
    }
    let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let mut col_sums = vec![0u64; k_star];
    for row in &counts {
        for (j, &c) in row.iter().enumerate() {
            col_sums[j] += c;
        }
    }
    Ok(ContingencyTable {
        counts,
        row_sums,
        col_sums,
        n: truth.len() as u64,
    })
}

/// Normalized mutual information in `[0, 1]`: 1 for identical partitions
/// (up to relabeling), 0 for independent ones.
pub fn nmi(truth: &Partition, pred: &Partition) -> Result<f64, MetricError> {
    let table = contingency(truth, pred)?;
    let n = table.n as f64;

    let mut numer = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            let ni = table.row_sums[i] as f64;
            let nj = table.col_sums[j] as f64;
            // Split form of n_ij * ln(n_ij * n / (n_i * n_j)). The ratio-logs
            // vanish exactly when n_ij equals a marginal, which makes
            // identical partitions score exactly 1.
            numer += nij * (nij / ni).ln() + nij * (nij / nj).ln() - nij * (nij / n).ln();
        }
    }
    numer *= -2.0;

    // Row and column entropies are summed separately so that for identical
    // partitions the denominator is exactly twice the (negated) numerator
    // accumulation, giving exactly 1.0.
    let mut h_row = 0.0;
    for &ni in &table.row_sums {
        if ni > 0 {
            let ni = ni as f64;
            h_row += ni * (ni / n).ln();
        }
    }
    let mut h_col = 0.0;
    for &nj in &table.col_sums {
        if nj > 0 {
            let nj = nj as f64;
            h_col += nj * (nj / n).ln();
        }
    }
    let denom = h_row + h_col;

    if denom == 0.0 {
        // Both partitions are a single cluster: full agreement by convention.
        return Ok(1.0);
    }
    Ok(numer / denom)
}

fn choose2(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index in `[-1, 1]`; chance-corrected pair-counting
/// agreement. Identical trivial partitions score 1.0 by convention.
pub fn ari(truth: &Partition, pred: &Partition) -> Result<f64, MetricError> {
    if truth.len() < 2 {
        return Err(MetricError::TooFewNodes { n: truth.len() });
    }
    let table = contingency(truth, pred)?;

    let sum_ij: f64 = table
        .counts
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| choose2(c))
        .sum();
    let sum_a: f64 = table.row_sums.iter().map(|&a| choose2(a)).sum();
    let sum_b: f64 = table.col_sums.iter().map(|&b| choose2(b)).sum();
    let total = choose2(table.n);

    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if max_index == expected {
        // Both all-singletons or both one-cluster.
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / (max_index - expected))
}
