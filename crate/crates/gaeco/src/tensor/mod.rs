//! Dense matrices with reverse-mode automatic differentiation.
//!
//! The [`Tape`](tape::Tape) records every forward operation; a single
//! backward pass replays them in exact reverse order and accumulates
//! gradients into the parameter leaves. All arithmetic is in f64.

pub mod edges;
pub mod matrix;
pub mod tape;

pub use edges::EdgeIndex;
pub use matrix::Matrix;
pub use tape::{Tape, TensorError, TensorId};
