//! Adam optimizer over the encoder's parameter set.

use thiserror::Error;

use crate::tensor::matrix::Matrix;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter '{name}' has shape {p_rows}x{p_cols} but gradient is {g_rows}x{g_cols}")]
    ShapeMismatch {
        name: String,
        p_rows: usize,
        p_cols: usize,
        g_rows: usize,
        g_cols: usize,
    },
    #[error("non-finite gradient for parameter '{name}'")]
    NonFiniteGradient { name: String },
    #[error("optimizer state tracks {state} parameters, got {given}")]
    ParamCountMismatch { state: usize, given: usize },
}

/// Adam with bias correction. Moments are laid out in the same fixed
/// parameter order as the encoder's flattened parameter list, so two
/// optimizers fed identical gradient sequences stay bit-identical.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip, off by default.
    pub clip_norm: Option<f64>,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected update in place. `names` is used only for
    /// error reporting and may be shorter than the parameter list.
    pub fn step(
        &mut self,
        params: &mut [&mut Matrix],
        grads: &[&Matrix],
        names: &[&str],
    ) -> Result<(), OptimError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(OptimError::ParamCountMismatch {
                state: self.m.len(),
                given: params.len().max(grads.len()),
            });
        }
        let name_of = |i: usize| names.get(i).map(|s| s.to_string()).unwrap_or(format!("param[{i}]"));
        for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
            if !p.same_shape(g) {
                return Err(OptimError::ShapeMismatch {
                    name: name_of(i),
                    p_rows: p.rows,
                    p_cols: p.cols,
                    g_rows: g.rows,
                    g_cols: g.cols,
                });
            }
            if !g.is_finite() {
                return Err(OptimError::NonFiniteGradient { name: name_of(i) });
            }
        }

        let clip_scale = match self.clip_norm {
            Some(max) => {
                let norm2: f64 = grads
                    .iter()
                    .flat_map(|g| g.data.iter())
                    .map(|v| v * v)
                    .sum();
                let norm = norm2.sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..g.data.len() {
                let gk = g.data[k] * clip_scale;
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m.data[k] / bc1;
                let v_hat = v.data[k] / bc2;
                p.data[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
