//! Multi-head graph attention encoder: two GAT layers mapping (A, X) to the
//! latent matrix Z. The hidden layer concatenates its heads, the embedding
//! layer averages them.
//!
//! Per head, every directed edge instance (j -> i) gets the score
//! `e_ij = LeakyReLU(<a_src, W h_i> + <a_dst, W h_j>)`, scores are softmax-
//! normalized over each node's in-neighborhood, and the node's new state is
//! the attention-weighted sum of its neighbors' projections.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{EdgeIndex, Matrix, Tape, TensorError, TensorId};

/// LeakyReLU slope for attention logits (GAT convention).
pub const ATTENTION_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum GatError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("hidden dim {hidden} not divisible by head count {heads}")]
    HiddenNotDivisible { hidden: usize, heads: usize },
    #[error("head count must be at least 1")]
    NoHeads,
    #[error("feature matrix has {got} rows but graph has {expected} nodes")]
    NodeCountMismatch { got: usize, expected: usize },
    #[error("checkpoint io error: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint is corrupt: {0}")]
    CheckpointCorrupt(String),
}

/// How a layer combines its heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Concat,
    Average,
}

/// One attention head: projection `w` (in_dim x head_dim) and the two halves
/// of the attention vector, each `head_dim x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Matrix,
    pub a_src: Matrix,
    pub a_dst: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    pub heads: Vec<HeadParams>,
    pub combine: Combine,
}

impl GatLayerParams {
    pub fn head_dim(&self) -> usize {
        self.heads[0].w.cols
    }

    pub fn in_dim(&self) -> usize {
        self.heads[0].w.rows
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub dropout_input: f64,
    pub dropout_attention: f64,
}

impl EncoderConfig {
    pub fn new(in_dim: usize) -> Self {
        Self {
            in_dim,
            hidden_dim: 256,
            embed_dim: 64,
            heads: 8,
            dropout_input: 0.4,
            dropout_attention: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), GatError> {
        if self.heads == 0 {
            return Err(GatError::NoHeads);
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(GatError::HiddenNotDivisible {
                hidden: self.hidden_dim,
                heads: self.heads,
            });
        }
        Ok(())
    }
}

/// Both layers' parameters, in a fixed flattening order
/// (layer, head, [w, a_src, a_dst]) shared with the optimizer and the
/// checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layer1: GatLayerParams,
    pub layer2: GatLayerParams,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect(),
    )
}

impl EncoderParams {
    /// Glorot-uniform initialization of every tensor, seeded.
    pub fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self, GatError> {
        cfg.validate()?;
        let head_dim1 = cfg.hidden_dim / cfg.heads;
        let make_layer = |in_dim: usize, head_dim: usize, combine: Combine, rng: &mut ChaCha8Rng| {
            GatLayerParams {
                heads: (0..cfg.heads)
                    .map(|_| HeadParams {
                        w: glorot(in_dim, head_dim, rng),
                        a_src: glorot(head_dim, 1, rng),
                        a_dst: glorot(head_dim, 1, rng),
                    })
                    .collect(),
                combine,
            }
        };
        Ok(Self {
            layer1: make_layer(cfg.in_dim, head_dim1, Combine::Concat, rng),
            layer2: make_layer(cfg.hidden_dim, cfg.embed_dim, Combine::Average, rng),
        })
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for layer in [&self.layer1, &self.layer2] {
            for head in &layer.heads {
                out.push(&head.w);
                out.push(&head.a_src);
                out.push(&head.a_dst);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for layer in [&mut self.layer1, &mut self.layer2] {
            for head in layer.heads.iter_mut() {
                out.push(&mut head.w);
                out.push(&mut head.a_src);
                out.push(&mut head.a_dst);
            }
        }
        out
    }

    /// Names matching the order of [`EncoderParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (li, layer) in [&self.layer1, &self.layer2].into_iter().enumerate() {
            for hi in 0..layer.heads.len() {
                for t in ["w", "a_src", "a_dst"] {
                    out.push(format!("layer{}.head{}.{}", li + 1, hi, t));
                }
            }
        }
        out
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|m| (m.rows, m.cols)).collect()
    }
}

/// Tape handles of one layer's parameters.
pub struct LayerIds {
    pub heads: Vec<(TensorId, TensorId, TensorId)>,
    pub combine: Combine,
}

fn register_layer(tape: &mut Tape, layer: &GatLayerParams) -> Result<LayerIds, TensorError> {
    let mut heads = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let w = tape.param(head.w.clone())?;
        let a_src = tape.param(head.a_src.clone())?;
        let a_dst = tape.param(head.a_dst.clone())?;
        heads.push((w, a_src, a_dst));
    }
    Ok(LayerIds {
        heads,
        combine: layer.combine,
    })
}

/// Per-edge attention logits for one head:
/// `e[e] = LeakyReLU(<a_src, W h_dst[e]> + <a_dst, W h_src[e]>)`.
/// Also returns the projected features `W h` for reuse by the aggregation.
pub fn attention_logits(
    tape: &mut Tape,
    head: (TensorId, TensorId, TensorId),
    h: TensorId,
    edges: &Arc<EdgeIndex>,
) -> Result<(TensorId, TensorId), TensorError> {
    let (w, a_src, a_dst) = head;
    let wh = tape.matmul(h, w)?;
    let s_dst_side = tape.matmul(wh, a_src)?; // score contribution of the receiving node i
    let s_src_side = tape.matmul(wh, a_dst)?; // score contribution of the neighbor j
    let dst_ids = Arc::new(edges.dst.clone());
    let src_ids = Arc::new(edges.src.clone());
    let per_edge_dst = tape.index_rows(s_dst_side, dst_ids)?;
    let per_edge_src = tape.index_rows(s_src_side, src_ids)?;
    let summed = tape.add(per_edge_dst, per_edge_src)?;
    let logits = tape.leaky_relu(summed, ATTENTION_LEAKY_SLOPE)?;
    Ok((logits, wh))
}

/// Dropout state for one encoder pass. `None` means eval mode.
pub struct DropoutSpec<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub input_p: f64,
    pub attention_p: f64,
}

fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Option<Arc<Vec<f64>>> {
    if p <= 0.0 {
        return None;
    }
    if p >= 1.0 {
        return Some(Arc::new(vec![0.0; len]));
    }
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    Some(Arc::new(
        (0..len)
            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
            .collect(),
    ))
}

/// One GAT layer: per head, softmax-normalized attention over each node's
/// in-neighborhood, then the weighted neighbor sum; heads combined by
/// concatenation or averaging, followed by the activation.
pub fn gat_layer_forward(
    tape: &mut Tape,
    layer: &LayerIds,
    h: TensorId,
    edges: &Arc<EdgeIndex>,
    elu_activation: bool,
    mut dropout: Option<&mut DropoutSpec<'_>>,
) -> Result<TensorId, TensorError> {
    let mut head_outputs = Vec::with_capacity(layer.heads.len());
    for &head in &layer.heads {
        let (logits, wh) = attention_logits(tape, head, h, edges)?;
        let mut alpha = tape.segment_softmax(logits, edges)?;
        if let Some(spec) = dropout.as_deref_mut() {
            if let Some(mask) = dropout_mask(edges.edge_count(), spec.attention_p, spec.rng) {
                alpha = tape.mul_mask(alpha, mask)?;
            }
        }
        head_outputs.push(tape.edge_aggregate(alpha, wh, edges)?);
    }
    let combined = match layer.combine {
        Combine::Concat => tape.concat_cols(&head_outputs)?,
        Combine::Average => tape.average(&head_outputs)?,
    };
    if elu_activation {
        tape.elu(combined)
    } else {
        Ok(combined)
    }
}

/// Handles produced by [`encode`]: the embedding tensor and the parameter
/// leaves in [`EncoderParams::tensors`] order (for gradient retrieval).
pub struct EncodeHandles {
    pub z: TensorId,
    pub param_ids: Vec<TensorId>,
}

/// Full encoder pass: layer 1 (multi-head concat, ELU), layer 2 (multi-head
/// average, identity). Pass a [`DropoutSpec`] to enable train-mode dropout on
/// layer inputs and attention coefficients.
pub fn encode(
    tape: &mut Tape,
    params: &EncoderParams,
    edges: &Arc<EdgeIndex>,
    x: &Matrix,
    mut dropout: Option<&mut DropoutSpec<'_>>,
) -> Result<EncodeHandles, GatError> {
    if x.rows != edges.node_count() {
        return Err(GatError::NodeCountMismatch {
            got: x.rows,
            expected: edges.node_count(),
        });
    }
    let layer1 = register_layer(tape, &params.layer1)?;
    let layer2 = register_layer(tape, &params.layer2)?;
    let mut param_ids = Vec::new();
    for ids in layer1.heads.iter().chain(layer2.heads.iter()) {
        param_ids.extend([ids.0, ids.1, ids.2]);
    }

    let mut h0 = tape.leaf(x.clone())?;
    if let Some(spec) = dropout.as_deref_mut() {
        if let Some(mask) = dropout_mask(x.data.len(), spec.input_p, spec.rng) {
            h0 = tape.mul_mask(h0, mask)?;
        }
    }
    let mut h1 = gat_layer_forward(tape, &layer1, h0, edges, true, dropout.as_deref_mut())?;
    if let Some(spec) = dropout.as_deref_mut() {
        let len = tape.value(h1).data.len();
        if let Some(mask) = dropout_mask(len, spec.input_p, spec.rng) {
            h1 = tape.mul_mask(h1, mask)?;
        }
    }
    let z = gat_layer_forward(tape, &layer2, h1, edges, false, dropout.as_deref_mut())?;
    Ok(EncodeHandles { z, param_ids })
}

// --- checkpoint format -----------------------------------------------------
//
// Little-endian binary:
//   magic  b"GAECOCP1"
//   u32    layer count (always 2)
//   per layer:
//     u8   combine (0 = concat, 1 = average)
//     u32  head count
//     per head, 3 tensors (w, a_src, a_dst):
//       u64 rows, u64 cols, rows*cols f64 values

const CHECKPOINT_MAGIC: &[u8; 8] = b"GAECOCP1";

fn write_matrix(w: &mut impl Write, m: &Matrix) -> std::io::Result<()> {
    w.write_all(&(m.rows as u64).to_le_bytes())?;
    w.write_all(&(m.cols as u64).to_le_bytes())?;
    for v in &m.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_matrix(r: &mut impl Read) -> Result<Matrix, GatError> {
    let rows = u64::from_le_bytes(read_exact_array::<8>(r)?) as usize;
    let cols = u64::from_le_bytes(read_exact_array::<8>(r)?) as usize;
    if rows.saturating_mul(cols) > 1 << 32 {
        return Err(GatError::CheckpointCorrupt(format!(
            "implausible tensor shape {rows}x{cols}"
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(f64::from_le_bytes(read_exact_array::<8>(r)?));
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn save_checkpoint(path: &Path, params: &EncoderParams) -> Result<(), GatError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&2u32.to_le_bytes())?;
    for layer in [&params.layer1, &params.layer2] {
        let combine = match layer.combine {
            Combine::Concat => 0u8,
            Combine::Average => 1u8,
        };
        w.write_all(&[combine])?;
        w.write_all(&(layer.heads.len() as u32).to_le_bytes())?;
        for head in &layer.heads {
            write_matrix(&mut w, &head.w)?;
            write_matrix(&mut w, &head.a_src)?;
            write_matrix(&mut w, &head.a_dst)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams, GatError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = read_exact_array::<8>(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(GatError::CheckpointCorrupt("bad magic".into()));
    }
    let layers = u32::from_le_bytes(read_exact_array::<4>(&mut r)?);
    if layers != 2 {
        return Err(GatError::CheckpointCorrupt(format!(
            "expected 2 layers, found {layers}"
        )));
    }
    let mut parsed = Vec::with_capacity(2);
    for _ in 0..2 {
        let combine = match read_exact_array::<1>(&mut r)?[0] {
            0 => Combine::Concat,
            1 => Combine::Average,
            other => {
                return Err(GatError::CheckpointCorrupt(format!(
                    "unknown combine tag {other}"
                )))
            }
        };
        let head_count = u32::from_le_bytes(read_exact_array::<4>(&mut r)?) as usize;
        if head_count == 0 {
            return Err(GatError::CheckpointCorrupt("zero heads".into()));
        }
        let mut heads = Vec::with_capacity(head_count);
        for _ in 0..head_count {
            heads.push(HeadParams {
                w: read_matrix(&mut r)?,
                a_src: read_matrix(&mut r)?,
                a_dst: read_matrix(&mut r)?,
            });
        }
        parsed.push(GatLayerParams { heads, combine });
    }
    let layer2 = parsed.pop().expect("two layers");
    let layer1 = parsed.pop().expect("two layers");
    Ok(EncoderParams { layer1, layer2 })
}
