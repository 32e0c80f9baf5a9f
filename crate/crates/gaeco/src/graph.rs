//! Immutable graph and feature storage shared by all downstream modules.
//!
//! A [`Graph`] stores a symmetrized, deduplicated adjacency in compressed-row
//! form. [`FeatureMatrix`] holds the dense node attribute matrix and
//! [`Partition`] a community labeling.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node index {index} out of range for graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("dense adjacency of {n} nodes ({entries} entries) exceeds cap of {cap} entries")]
    DenseCapExceeded { n: usize, entries: u64, cap: u64 },
    #[error("feature matrix contains a non-finite entry at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("feature row count {rows} does not match expected {expected}")]
    RowCountMismatch { rows: usize, expected: usize },
    #[error("label {label} out of range for {k} communities")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("partition must be non-empty")]
    EmptyPartition,
}

/// Undirected graph over nodes `0..n` in compressed-row form.
///
/// Adjacency is symmetric, deduplicated, and each row's neighbor list is
/// sorted ascending. Immutable after construction; safe to share across
/// threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    row_index: Vec<usize>,
    col_index: Vec<usize>,
    has_self_loops: bool,
}

impl Graph {
    /// Builds a graph from an edge list: symmetrizes, deduplicates, and
    /// (when `add_self_loops` is set) adds a self-loop on every node.
    pub fn build(
        n: usize,
        edge_list: &[(usize, usize)],
        add_self_loops: bool,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::EmptyGraph);
        }
        for &(i, j) in edge_list {
            if i >= n {
                return Err(GraphError::IndexOutOfRange { index: i, n });
            }
            if j >= n {
                return Err(GraphError::IndexOutOfRange { index: j, n });
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in edge_list {
            adj[i].push(j);
            adj[j].push(i);
        }
        if add_self_loops {
            for (i, row) in adj.iter_mut().enumerate() {
                row.push(i);
            }
        }
        let mut row_index = Vec::with_capacity(n + 1);
        let mut col_index = Vec::new();
        row_index.push(0);
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_index.extend_from_slice(row);
            row_index.push(col_index.len());
        }
        Ok(Self {
            n,
            row_index,
            col_index,
            has_self_loops: add_self_loops,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of stored directed edge instances (both orientations, plus
    /// self-loops when present).
    pub fn directed_edge_count(&self) -> usize {
        self.col_index.len()
    }

    /// Unique undirected edges, self-loops counted once.
    pub fn undirected_edge_count(&self) -> usize {
        let mut count = 0;
        for i in 0..self.n {
            for &j in self.neighbors_unchecked(i) {
                if j >= i {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    /// Ascending neighbor list of node `i` (includes `i` itself when
    /// self-loops were added).
    pub fn neighbors(&self, i: usize) -> Result<&[usize], GraphError> {
        if i >= self.n {
            return Err(GraphError::IndexOutOfRange { index: i, n: self.n });
        }
        Ok(self.neighbors_unchecked(i))
    }

    pub(crate) fn neighbors_unchecked(&self, i: usize) -> &[usize] {
        &self.col_index[self.row_index[i]..self.row_index[i + 1]]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.neighbors_unchecked(i).binary_search(&j).is_ok()
    }

    pub fn row_index(&self) -> &[usize] {
        &self.row_index
    }

    pub fn col_index(&self) -> &[usize] {
        &self.col_index
    }

    /// Unique undirected edges `(i, j)` with `i <= j`, excluding self-loops.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for &j in self.neighbors_unchecked(i) {
                if j > i {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Materializes the dense 0/1 adjacency used as the reconstruction
    /// target. The diagonal is forced to `diag_one` regardless of whether
    /// self-loops are stored, so the target policy is independent of the
    /// aggregation policy.
    pub fn dense_adjacency(&self, diag_one: bool, cap: u64) -> Result<Vec<f64>, GraphError> {
        let entries = (self.n as u64) * (self.n as u64);
        if entries > cap {
            return Err(GraphError::DenseCapExceeded {
                n: self.n,
                entries,
                cap,
            });
        }
        let mut a = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for &j in self.neighbors_unchecked(i) {
                if i != j {
                    a[i * self.n + j] = 1.0;
                }
            }
            if diag_one {
                a[i * self.n + i] = 1.0;
            }
        }
        Ok(a)
    }
}

/// Dense `n x f` node attribute matrix. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    f: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, f: usize, values: Vec<f64>) -> Result<Self, GraphError> {
        assert_eq!(values.len(), n * f, "feature buffer length mismatch");
        for (idx, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(GraphError::NonFiniteFeature {
                    row: idx / f.max(1),
                    col: idx % f.max(1),
                });
            }
        }
        Ok(Self { n, f, values })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn feature_dim(&self) -> usize {
        self.f
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.f..(i + 1) * self.f]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Divides each row by its L1 norm; rows summing to zero are left
    /// unchanged.
    pub fn row_normalized(&self) -> FeatureMatrix {
        let mut values = self.values.clone();
        for i in 0..self.n {
            let row = &mut values[i * self.f..(i + 1) * self.f];
            let norm: f64 = row.iter().map(|v| v.abs()).sum();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        FeatureMatrix {
            n: self.n,
            f: self.f,
            values,
        }
    }
}

/// Node-to-community assignment: `labels[i]` is the community of node `i`,
/// every label in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self, GraphError> {
        if labels.is_empty() || k == 0 {
            return Err(GraphError::EmptyPartition);
        }
        for &l in &labels {
            if l >= k {
                return Err(GraphError::LabelOutOfRange { label: l, k });
            }
        }
        Ok(Self { labels, k })
    }

    /// Builds a partition from arbitrary labels, taking `k` as one past the
    /// maximum observed label.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self, GraphError> {
        let k = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
        Self::new(labels, k.max(1))
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of distinct labels actually present.
    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.k];
        for &l in &self.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_symmetrizes_and_adds_self_loops() {
        let g = Graph::build(3, &[(0, 1)], true).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[0, 1]);
        assert_eq!(g.neighbors(1).unwrap(), &[0, 1]);
        assert_eq!(g.neighbors(2).unwrap(), &[2]);
        assert_eq!(g.directed_edge_count(), 5);
    }

    #[test]
    fn build_dedups() {
        let g = Graph::build(2, &[(0, 1), (1, 0), (0, 1)], true).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[0, 1]);
        assert_eq!(g.neighbors(1).unwrap(), &[0, 1]);
        let g = Graph::build(2, &[(0, 1), (1, 0), (0, 1)], false).unwrap();
        assert_eq!(g.directed_edge_count(), 2);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(matches!(
            Graph::build(2, &[(0, 2)], true),
            Err(GraphError::IndexOutOfRange { index: 2, n: 2 })
        ));
        assert!(matches!(Graph::build(0, &[], true), Err(GraphError::EmptyGraph)));
    }

    #[test]
    fn star_graph_neighbors() {
        let g = Graph::build(5, &[(0, 1), (0, 2), (0, 3), (0, 4)], true).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn isolated_node_neighbors() {
        let g = Graph::build(2, &[], true).unwrap();
        assert_eq!(g.neighbors(1).unwrap(), &[1]);
        let g = Graph::build(2, &[], false).unwrap();
        assert_eq!(g.neighbors(1).unwrap(), &[] as &[usize]);
    }

    #[test]
    fn dense_adjacency_path() {
        let g = Graph::build(3, &[(0, 1), (1, 2)], true).unwrap();
        let a = g.dense_adjacency(true, 1_000).unwrap();
        assert_eq!(
            a,
            vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn dense_adjacency_empty_is_identity() {
        let g = Graph::build(2, &[], true).unwrap();
        let a = g.dense_adjacency(true, 100).unwrap();
        assert_eq!(a, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn dense_adjacency_complete() {
        let g = Graph::build(3, &[(0, 1), (0, 2), (1, 2)], true).unwrap();
        let a = g.dense_adjacency(true, 100).unwrap();
        assert!(a.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dense_adjacency_cap() {
        let g = Graph::build(10, &[], true).unwrap();
        assert!(matches!(
            g.dense_adjacency(true, 50),
            Err(GraphError::DenseCapExceeded { .. })
        ));
    }

    #[test]
    fn dense_adjacency_is_symmetric() {
        let g = Graph::build(6, &[(0, 1), (2, 3), (1, 4), (0, 5), (3, 5)], true).unwrap();
        let a = g.dense_adjacency(true, 10_000).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(a[i * 6 + j], a[j * 6 + i]);
            }
        }
    }

    #[test]
    fn neighbor_symmetry() {
        let g = Graph::build(5, &[(0, 3), (3, 4), (1, 2)], false).unwrap();
        for i in 0..5 {
            for &j in g.neighbors(i).unwrap() {
                assert!(g.neighbors(j).unwrap().contains(&i));
            }
        }
    }

    #[test]
    fn edge_count_after_build() {
        let g = Graph::build(4, &[(0, 1), (1, 0), (2, 3)], true).unwrap();
        // 2 unique undirected pairs, both orientations, plus 4 self-loops.
        assert_eq!(g.directed_edge_count(), 2 * 2 + 4);
        assert_eq!(g.undirected_edge_count(), 2 + 4);
    }

    #[test]
    fn row_normalize_features() {
        let f = FeatureMatrix::new(3, 2, vec![2.0, 2.0, 0.0, 0.0, 1.0, 3.0]).unwrap();
        let n = f.row_normalized();
        assert_eq!(n.row(0), &[0.5, 0.5]);
        assert_eq!(n.row(1), &[0.0, 0.0]);
        assert_eq!(n.row(2), &[0.25, 0.75]);
    }

    #[test]
    fn features_reject_nan() {
        assert!(FeatureMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![0, 1, 2], 3).is_ok());
        assert!(Partition::new(vec![0, 3], 3).is_err());
        assert!(Partition::new(vec![], 1).is_err());
        let p = Partition::from_labels(vec![0, 2, 2]).unwrap();
        assert_eq!(p.k(), 3);
        assert_eq!(p.distinct_labels(), 2);
    }
}
