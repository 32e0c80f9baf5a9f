//! Directed edge instances grouped by destination, for attention softmax and
//! neighborhood aggregation.

use crate::graph::Graph;

/// Parallel edge arrays: for each destination node `d`, the edge slots
/// `offsets[d]..offsets[d + 1]` hold the sources attending into `d` (both
/// orientations of every undirected edge, plus self-loops when the graph
/// stores them). Sources within a group are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeIndex {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl EdgeIndex {
    /// Builds the edge index directly from the graph's CSR rows: row `d`
    /// lists exactly the neighbors that feed node `d`.
    pub fn from_graph(g: &Graph) -> Self {
        let n = g.node_count();
        let mut src = Vec::with_capacity(g.directed_edge_count());
        let mut dst = Vec::with_capacity(g.directed_edge_count());
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in 0..n {
            for &s in g.neighbors_unchecked(d) {
                src.push(s);
                dst.push(d);
            }
            offsets.push(src.len());
        }
        Self { src, dst, offsets }
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn group(&self, d: usize) -> std::ops::Range<usize> {
        self.offsets[d]..self.offsets[d + 1]
    }
}
