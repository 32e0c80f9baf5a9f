//! Operation tape for reverse-mode differentiation.
//!
//! Every op validates shapes, records its inputs, and checks the result for
//! non-finite entries so a NaN is reported at the op that produced it rather
//! than surfacing later as a corrupted gradient. Backward visits nodes in
//! exact reverse recording order; all reductions run in a fixed sequential
//! order, so identical inputs give bit-identical gradients.

use std::sync::Arc;

use thiserror::Error;

use super::edges::EdgeIndex;
use super::matrix::Matrix;

/// Clamp applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

pub type TensorId = usize;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a 1x1 loss tensor, got {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("{op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    /// a * b^T
    MatMulNt(TensorId, TensorId),
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    Sigmoid(TensorId),
    Elu(TensorId),
    Exp(TensorId),
    Log(TensorId),
    Square(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    LeakyRelu(TensorId, f64),
    MulMask(TensorId, Arc<Vec<f64>>),
    IndexRows(TensorId, Arc<Vec<usize>>),
    ConcatCols(Vec<TensorId>),
    Average(Vec<TensorId>),
    SegmentSoftmax(TensorId, Arc<EdgeIndex>),
    EdgeAggregate {
        alpha: TensorId,
        feats: TensorId,
        edges: Arc<EdgeIndex>,
    },
    BceMean {
        probs: TensorId,
        target: Arc<Matrix>,
        pos_weight: Option<f64>,
    },
    SampledBce {
        z: TensorId,
        /// (i, j, label)
        pairs: Arc<Vec<(usize, usize, f64)>>,
    },
    KmeansLoss {
        z: TensorId,
        centroids: Arc<Matrix>,
        assign: Vec<usize>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation and differentiates it once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Constant input: participates in the forward pass, receives no gradient.
    pub fn leaf(&mut self, value: Matrix) -> Result<TensorId, TensorError> {
        self.push("leaf", value, Op::Leaf, false)
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, value: Matrix) -> Result<TensorId, TensorError> {
        self.push("param", value, Op::Leaf, true)
    }

    pub fn value(&self, id: TensorId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        (self.nodes[id].value.rows, self.nodes[id].value.cols)
    }

    /// Gradient of the loss w.r.t. tensor `id`, populated by [`Tape::backward`].
    pub fn grad(&self, id: TensorId) -> Option<&Matrix> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Matrix,
        op: Op,
        requires_grad: bool,
    ) -> Result<TensorId, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.cols != bv.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{}x{} * {}x{}", av.rows, av.cols, bv.rows, bv.cols),
            });
        }
        let value = av.matmul(bv);
        let rg = self.needs_grad(&[a, b]);
        self.push("matmul", value, Op::MatMul(a, b), rg)
    }

    /// `a * b^T` (used by the inner-product decoder).
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.cols != bv.cols {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                detail: format!("{}x{} * ({}x{})^T", av.rows, av.cols, bv.rows, bv.cols),
            });
        }
        let value = av.matmul_nt(bv);
        let rg = self.needs_grad(&[a, b]);
        self.push("matmul_nt", value, Op::MatMulNt(a, b), rg)
    }

    /// Elementwise add. `b` may also be a `1 x cols` row vector broadcast
    /// over the rows of `a`.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        let value = if av.same_shape(bv) {
            let mut out = av.clone();
            out.add_assign(bv);
            out
        } else if bv.rows == 1 && bv.cols == av.cols {
            let mut out = av.clone();
            for i in 0..out.rows {
                for j in 0..out.cols {
                    out.data[i * out.cols + j] += bv.data[j];
                }
            }
            out
        } else {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                detail: format!("{}x{} + {}x{}", av.rows, av.cols, bv.rows, bv.cols),
            });
        };
        let rg = self.needs_grad(&[a, b]);
        self.push("add", value, Op::Add(a, b), rg)
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if !av.same_shape(bv) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                detail: format!("{}x{} vs {}x{}", av.rows, av.cols, bv.rows, bv.cols),
            });
        }
        let value = Matrix::from_vec(
            av.rows,
            av.cols,
            av.data.iter().zip(bv.data.iter()).map(|(x, y)| x * y).collect(),
        );
        let rg = self.needs_grad(&[a, b]);
        self.push("mul", value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: TensorId, s: f64) -> Result<TensorId, TensorError> {
        let value = self.nodes[a].value.map(|v| v * s);
        let rg = self.needs_grad(&[a]);
        self.push("scale", value, Op::Scale(a, s), rg)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let value = self.nodes[a].value.map(sigmoid);
        let rg = self.needs_grad(&[a]);
        self.push("sigmoid", value, Op::Sigmoid(a), rg)
    }

    pub fn elu(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let value = self.nodes[a].value.map(|v| if v > 0.0 { v } else { v.exp() - 1.0 });
        let rg = self.needs_grad(&[a]);
        self.push("elu", value, Op::Elu(a), rg)
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let value = self.nodes[a].value.map(f64::exp);
        let rg = self.needs_grad(&[a]);
        self.push("exp", value, Op::Exp(a), rg)
    }

    /// Natural log with the argument clamped below at [`LOG_EPS`].
    pub fn log(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let value = self.nodes[a].value.map(|v| v.max(LOG_EPS).ln());
        let rg = self.needs_grad(&[a]);
        self.push("log", value, Op::Log(a), rg)
    }

    pub fn square(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let value = self.nodes[a].value.map(|v| v * v);
        let rg = self.needs_grad(&[a]);
        self.push("square", value, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let s: f64 = self.nodes[a].value.data.iter().sum();
        let rg = self.needs_grad(&[a]);
        self.push("sum", Matrix::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        let v = &self.nodes[a].value;
        let s: f64 = v.data.iter().sum::<f64>() / v.data.len() as f64;
        let rg = self.needs_grad(&[a]);
        self.push("mean", Matrix::scalar(s), Op::Mean(a), rg)
    }

    /// `x` for `x >= 0`, `slope * x` otherwise; the subgradient at 0 uses
    /// the positive branch.
    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> Result<TensorId, TensorError> {
        if !(0.0..1.0).contains(&slope) || slope == 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "leaky_relu",
                detail: format!("slope must be in (0, 1), got {slope}"),
            });
        }
        let value = self.nodes[a].value.map(|v| if v >= 0.0 { v } else { slope * v });
        let rg = self.needs_grad(&[a]);
        self.push("leaky_relu", value, Op::LeakyRelu(a, slope), rg)
    }

    /// Elementwise multiply by a fixed mask (dropout).
    pub fn mul_mask(&mut self, a: TensorId, mask: Arc<Vec<f64>>) -> Result<TensorId, TensorError> {
        let av = &self.nodes[a].value;
        if av.data.len() != mask.len() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_mask",
                detail: format!("tensor has {} entries, mask {}", av.data.len(), mask.len()),
            });
        }
        let value = Matrix::from_vec(
            av.rows,
            av.cols,
            av.data.iter().zip(mask.iter()).map(|(x, m)| x * m).collect(),
        );
        let rg = self.needs_grad(&[a]);
        self.push("mul_mask", value, Op::MulMask(a, mask), rg)
    }

    /// Row gather: `out[e] = a[indices[e]]`.
    pub fn index_rows(
        &mut self,
        a: TensorId,
        indices: Arc<Vec<usize>>,
    ) -> Result<TensorId, TensorError> {
        let av = &self.nodes[a].value;
        if let Some(&bad) = indices.iter().find(|&&i| i >= av.rows) {
            return Err(TensorError::InvalidArgument {
                op: "index_rows",
                detail: format!("row index {bad} out of range for {} rows", av.rows),
            });
        }
        let mut data = Vec::with_capacity(indices.len() * av.cols);
        for &i in indices.iter() {
            data.extend_from_slice(av.row(i));
        }
        let value = Matrix::from_vec(indices.len(), av.cols, data);
        let rg = self.needs_grad(&[a]);
        self.push("index_rows", value, Op::IndexRows(a, indices), rg)
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat_cols",
                detail: "no tensors to concatenate".into(),
            });
        }
        let rows = self.nodes[parts[0]].value.rows;
        let mut cols = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            if v.rows != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {} vs {}", rows, v.rows),
                });
            }
            cols += v.cols;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p].value.row(i));
            }
        }
        let value = Matrix::from_vec(rows, cols, data);
        let rg = self.needs_grad(parts);
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Elementwise mean of same-shape tensors (head averaging).
    pub fn average(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "average",
                detail: "no tensors to average".into(),
            });
        }
        let first = &self.nodes[parts[0]].value;
        let (rows, cols) = (first.rows, first.cols);
        let mut out = first.clone();
        for &p in &parts[1..] {
            let v = &self.nodes[p].value;
            if !v.same_shape(&out) {
                return Err(TensorError::ShapeMismatch {
                    op: "average",
                    detail: format!("{}x{} vs {}x{}", rows, cols, v.rows, v.cols),
                });
            }
            out.add_assign(v);
        }
        out.scale_assign(1.0 / parts.len() as f64);
        let rg = self.needs_grad(parts);
        self.push("average", out, Op::Average(parts.to_vec()), rg)
    }

    /// Softmax of per-edge scores within each destination group, with
    /// per-group max subtraction for stability.
    pub fn segment_softmax(
        &mut self,
        scores: TensorId,
        edges: &Arc<EdgeIndex>,
    ) -> Result<TensorId, TensorError> {
        let sv = &self.nodes[scores].value;
        if sv.rows != edges.edge_count() || sv.cols != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                detail: format!(
                    "expected {}x1 scores, got {}x{}",
                    edges.edge_count(),
                    sv.rows,
                    sv.cols
                ),
            });
        }
        let mut out = vec![0.0; sv.rows];
        for d in 0..edges.node_count() {
            let group = edges.group(d);
            if group.is_empty() {
                return Err(TensorError::InvalidArgument {
                    op: "segment_softmax",
                    detail: format!("node {d} has an empty attention group"),
                });
            }
            let max = sv.data[group.clone()]
                .iter()
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut denom = 0.0;
            for e in group.clone() {
                let x = (sv.data[e] - max).exp();
                out[e] = x;
                denom += x;
            }
            for e in group {
                out[e] /= denom;
            }
        }
        let value = Matrix::from_vec(sv.rows, 1, out);
        let rg = self.needs_grad(&[scores]);
        self.push(
            "segment_softmax",
            value,
            Op::SegmentSoftmax(scores, Arc::clone(edges)),
            rg,
        )
    }

    /// Attention-weighted neighborhood sum: `out[d] = sum_e alpha[e] * feats[src[e]]`
    /// over the edges in `d`'s group.
    pub fn edge_aggregate(
        &mut self,
        alpha: TensorId,
        feats: TensorId,
        edges: &Arc<EdgeIndex>,
    ) -> Result<TensorId, TensorError> {
        let av = &self.nodes[alpha].value;
        let fv = &self.nodes[feats].value;
        if av.rows != edges.edge_count() || av.cols != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "edge_aggregate",
                detail: format!("alpha is {}x{}, expected {}x1", av.rows, av.cols, edges.edge_count()),
            });
        }
        if fv.rows != edges.node_count() {
            return Err(TensorError::ShapeMismatch {
                op: "edge_aggregate",
                detail: format!("feats has {} rows, graph has {} nodes", fv.rows, edges.node_count()),
            });
        }
        let d = fv.cols;
        let mut out = Matrix::zeros(edges.node_count(), d);
        for dst in 0..edges.node_count() {
            let row = out.row_mut(dst);
            for e in edges.group(dst) {
                let w = av.data[e];
                let f = fv.row(edges.src[e]);
                for (o, &x) in row.iter_mut().zip(f.iter()) {
                    *o += w * x;
                }
            }
        }
        let rg = self.needs_grad(&[alpha, feats]);
        self.push(
            "edge_aggregate",
            out,
            Op::EdgeAggregate {
                alpha,
                feats,
                edges: Arc::clone(edges),
            },
            rg,
        )
    }

    /// Mean binary cross-entropy of probabilities against a fixed 0/1 target,
    /// logs clamped at [`LOG_EPS`]. `pos_weight` scales the positive-class
    /// term when set.
    pub fn bce_mean(
        &mut self,
        probs: TensorId,
        target: Arc<Matrix>,
        pos_weight: Option<f64>,
    ) -> Result<TensorId, TensorError> {
        let pv = &self.nodes[probs].value;
        if !pv.same_shape(&target) {
            return Err(TensorError::ShapeMismatch {
                op: "bce_mean",
                detail: format!(
                    "probs {}x{} vs target {}x{}",
                    pv.rows, pv.cols, target.rows, target.cols
                ),
            });
        }
        let w_pos = pos_weight.unwrap_or(1.0);
        let n = pv.data.len() as f64;
        let mut loss = 0.0;
        for (&p, &a) in pv.data.iter().zip(target.data.iter()) {
            let p = p.clamp(LOG_EPS, 1.0 - LOG_EPS);
            loss += -(w_pos * a * p.ln() + (1.0 - a) * (1.0 - p).ln());
        }
        loss /= n;
        let rg = self.needs_grad(&[probs]);
        self.push(
            "bce_mean",
            Matrix::scalar(loss),
            Op::BceMean {
                probs,
                target,
                pos_weight,
            },
            rg,
        )
    }

    /// Mean BCE over explicit node pairs, evaluated from embedding inner
    /// products in the numerically stable logit form.
    pub fn sampled_bce(
        &mut self,
        z: TensorId,
        pairs: Arc<Vec<(usize, usize, f64)>>,
    ) -> Result<TensorId, TensorError> {
        if pairs.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "sampled_bce",
                detail: "no pairs to score".into(),
            });
        }
        let zv = &self.nodes[z].value;
        let mut loss = 0.0;
        for &(i, j, y) in pairs.iter() {
            let s = dot(zv.row(i), zv.row(j));
            loss += softplus(s) - y * s;
        }
        loss /= pairs.len() as f64;
        let rg = self.needs_grad(&[z]);
        self.push(
            "sampled_bce",
            Matrix::scalar(loss),
            Op::SampledBce { z, pairs },
            rg,
        )
    }

    /// Mean squared distance of each embedding row to its nearest centroid.
    /// Centroids are constants; the gradient flows to `z` only. Ties break
    /// toward the lowest centroid index.
    pub fn kmeans_loss(
        &mut self,
        z: TensorId,
        centroids: Arc<Matrix>,
    ) -> Result<TensorId, TensorError> {
        let zv = &self.nodes[z].value;
        if centroids.rows == 0 {
            return Err(TensorError::InvalidArgument {
                op: "kmeans_loss",
                detail: "no centroids".into(),
            });
        }
        if centroids.cols != zv.cols {
            return Err(TensorError::ShapeMismatch {
                op: "kmeans_loss",
                detail: format!("embeddings dim {} vs centroid dim {}", zv.cols, centroids.cols),
            });
        }
        let mut loss = 0.0;
        let mut assign = Vec::with_capacity(zv.rows);
        for i in 0..zv.rows {
            let (j, d2) = nearest_centroid(zv.row(i), &centroids);
            assign.push(j);
            loss += d2;
        }
        loss /= zv.rows as f64;
        let rg = self.needs_grad(&[z]);
        self.push(
            "kmeans_loss",
            Matrix::scalar(loss),
            Op::KmeansLoss { z, centroids, assign },
            rg,
        )
    }

    /// Propagates gradients from the scalar `loss` back to every parameter
    /// leaf. Consumes the tape: a second call is an error.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let lv = &self.nodes[loss].value;
        if lv.rows != 1 || lv.cols != 1 {
            return Err(TensorError::LossNotScalar {
                rows: lv.rows,
                cols: lv.cols,
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Matrix::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let rg = |id: TensorId| self.nodes[id].requires_grad;
        let val = |id: TensorId| &self.nodes[id].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if rg(*a) {
                    accum(grads, *a, g.matmul_nt(val(*b)));
                }
                if rg(*b) {
                    accum(grads, *b, val(*a).matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if rg(*a) {
                    accum(grads, *a, g.matmul(val(*b)));
                }
                if rg(*b) {
                    accum(grads, *b, g.matmul_tn(val(*a)));
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    accum(grads, *a, g.clone());
                }
                if rg(*b) {
                    let bv = val(*b);
                    if bv.same_shape(g) {
                        accum(grads, *b, g.clone());
                    } else {
                        // broadcast row vector: column sums
                        let mut col = Matrix::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for c in 0..g.cols {
                                col.data[c] += g.data[r * g.cols + c];
                            }
                        }
                        accum(grads, *b, col);
                    }
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    accum(grads, *a, hadamard(g, val(*b)));
                }
                if rg(*b) {
                    accum(grads, *b, hadamard(g, val(*a)));
                }
            }
            Op::Scale(a, s) => {
                if rg(*a) {
                    accum(grads, *a, g.map(|v| v * s));
                }
            }
            Op::Sigmoid(a) => {
                if rg(*a) {
                    let y = &node.value;
                    let d = Matrix::from_vec(
                        y.rows,
                        y.cols,
                        y.data
                            .iter()
                            .zip(g.data.iter())
                            .map(|(&y, &g)| g * y * (1.0 - y))
                            .collect(),
                    );
                    accum(grads, *a, d);
                }
            }
            Op::Elu(a) => {
                if rg(*a) {
                    let x = val(*a);
                    let d = zip_map(g, x, |g, x| g * if x > 0.0 { 1.0 } else { x.exp() });
                    accum(grads, *a, d);
                }
            }
            Op::Exp(a) => {
                if rg(*a) {
                    accum(grads, *a, hadamard(g, &node.value));
                }
            }
            Op::Log(a) => {
                if rg(*a) {
                    let x = val(*a);
                    let d = zip_map(g, x, |g, x| if x >= LOG_EPS { g / x } else { 0.0 });
                    accum(grads, *a, d);
                }
            }
            Op::Square(a) => {
                if rg(*a) {
                    let x = val(*a);
                    accum(grads, *a, zip_map(g, x, |g, x| 2.0 * x * g));
                }
            }
            Op::Sum(a) => {
                if rg(*a) {
                    let x = val(*a);
                    let s = g.data[0];
                    accum(grads, *a, Matrix::from_vec(x.rows, x.cols, vec![s; x.data.len()]));
                }
            }
            Op::Mean(a) => {
                if rg(*a) {
                    let x = val(*a);
                    let s = g.data[0] / x.data.len() as f64;
                    accum(grads, *a, Matrix::from_vec(x.rows, x.cols, vec![s; x.data.len()]));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if rg(*a) {
                    let x = val(*a);
                    let slope = *slope;
                    let d = zip_map(g, x, |g, x| g * if x >= 0.0 { 1.0 } else { slope });
                    accum(grads, *a, d);
                }
            }
            Op::MulMask(a, mask) => {
                if rg(*a) {
                    let d = Matrix::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(mask.iter()).map(|(g, m)| g * m).collect(),
                    );
                    accum(grads, *a, d);
                }
            }
            Op::IndexRows(a, indices) => {
                if rg(*a) {
                    let x = val(*a);
                    let mut d = Matrix::zeros(x.rows, x.cols);
                    for (e, &i) in indices.iter().enumerate() {
                        let src = g.row(e);
                        let dst = d.row_mut(i);
                        for (o, &v) in dst.iter_mut().zip(src.iter()) {
                            *o += v;
                        }
                    }
                    accum(grads, *a, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    if rg(p) {
                        let mut d = Matrix::zeros(pv.rows, pv.cols);
                        for r in 0..pv.rows {
                            let src = &g.data[r * g.cols + offset..r * g.cols + offset + pv.cols];
                            d.row_mut(r).copy_from_slice(src);
                        }
                        accum(grads, p, d);
                    }
                    offset += pv.cols;
                }
            }
            Op::Average(parts) => {
                let s = 1.0 / parts.len() as f64;
                for &p in parts {
                    if rg(p) {
                        accum(grads, p, g.map(|v| v * s));
                    }
                }
            }
            Op::SegmentSoftmax(scores, edges) => {
                if rg(*scores) {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows, 1);
                    for dst in 0..edges.node_count() {
                        let group = edges.group(dst);
                        let mut dot_gy = 0.0;
                        for e in group.clone() {
                            dot_gy += g.data[e] * y.data[e];
                        }
                        for e in group {
                            d.data[e] = y.data[e] * (g.data[e] - dot_gy);
                        }
                    }
                    accum(grads, *scores, d);
                }
            }
            Op::EdgeAggregate { alpha, feats, edges } => {
                let av = val(*alpha);
                let fv = val(*feats);
                if rg(*alpha) {
                    let mut d = Matrix::zeros(av.rows, 1);
                    for dst in 0..edges.node_count() {
                        let grow = g.row(dst);
                        for e in edges.group(dst) {
                            d.data[e] = dot(grow, fv.row(edges.src[e]));
                        }
                    }
                    accum(grads, *alpha, d);
                }
                if rg(*feats) {
                    let mut d = Matrix::zeros(fv.rows, fv.cols);
                    for dst in 0..edges.node_count() {
                        let grow = g.row(dst);
                        for e in edges.group(dst) {
                            let w = av.data[e];
                            let drow = d.row_mut(edges.src[e]);
                            for (o, &v) in drow.iter_mut().zip(grow.iter()) {
                                *o += w * v;
                            }
                        }
                    }
                    accum(grads, *feats, d);
                }
            }
            Op::BceMean {
                probs,
                target,
                pos_weight,
            } => {
                if rg(*probs) {
                    let pv = val(*probs);
                    let w_pos = pos_weight.unwrap_or(1.0);
                    let n = pv.data.len() as f64;
                    let scale = g.data[0] / n;
                    let d = Matrix::from_vec(
                        pv.rows,
                        pv.cols,
                        pv.data
                            .iter()
                            .zip(target.data.iter())
                            .map(|(&p, &a)| {
                                if (LOG_EPS..=1.0 - LOG_EPS).contains(&p) {
                                    scale * (-w_pos * a / p + (1.0 - a) / (1.0 - p))
                                } else {
                                    // clamped region: the forward value is constant here
                                    0.0
                                }
                            })
                            .collect(),
                    );
                    accum(grads, *probs, d);
                }
            }
            Op::SampledBce { z, pairs } => {
                if rg(*z) {
                    let zv = val(*z);
                    let mut d = Matrix::zeros(zv.rows, zv.cols);
                    let scale = g.data[0] / pairs.len() as f64;
                    for &(i, j, y) in pairs.iter() {
                        let s = dot(zv.row(i), zv.row(j));
                        let coef = scale * (sigmoid(s) - y);
                        for (o, &v) in d.row_mut(i).iter_mut().zip(zv.row(j).iter()) {
                            *o += coef * v;
                        }
                        for (o, &v) in d.row_mut(j).iter_mut().zip(zv.row(i).iter()) {
                            *o += coef * v;
                        }
                    }
                    accum(grads, *z, d);
                }
            }
            Op::KmeansLoss { z, centroids, assign } => {
                if rg(*z) {
                    let zv = val(*z);
                    let scale = g.data[0] * 2.0 / zv.rows as f64;
                    let mut d = Matrix::zeros(zv.rows, zv.cols);
                    for (i, &j) in assign.iter().enumerate() {
                        let c = centroids.row(j);
                        let zrow = zv.row(i);
                        for ((o, &zv), &cv) in d.row_mut(i).iter_mut().zip(zrow).zip(c) {
                            *o = scale * (zv - cv);
                        }
                    }
                    accum(grads, *z, d);
                }
            }
        }
    }
}

fn accum(grads: &mut [Option<Matrix>], id: TensorId, delta: Matrix) {
    match &mut grads[id] {
        Some(g) => g.add_assign(&delta),
        slot => *slot = Some(delta),
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(b.data.iter()).map(|(x, y)| x * y).collect(),
    )
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_vec(
        a.rows,
        a.cols,
        a.data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x), evaluated without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Index and squared distance of the nearest centroid row, ties toward the
/// lowest index.
pub fn nearest_centroid(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..centroids.rows {
        let c = centroids.row(j);
        let mut d2 = 0.0;
        for (x, y) in point.iter().zip(c.iter()) {
            let d = x - y;
            d2 += d * d;
        }
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}
