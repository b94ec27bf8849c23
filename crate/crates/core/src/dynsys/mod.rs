//! Parametric dynamical systems `h(t+1) = f(h(t), x(t), theta)`.
//!
//! A system exposes its transition together with the two derivatives the
//! gradient estimators need: the state Jacobian `df/dh` (densely, and as
//! Jacobian-vector products) and the per-unit parameter derivatives
//! `df_i/dtheta`, which are sparse for recurrent networks because each
//! parameter feeds exactly one unit.

mod rnn;
mod toy;

pub use rnn::{InternalParams, Rnn};
pub use toy::LinearLeak;

use crate::error::{check_len, Result};
use crate::linalg::Matrix;

/// Pointwise activation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }
}

/// Sparse row `df_i/dtheta` over the flat parameter vector.
///
/// Indices are strictly increasing. Entries whose value happens to be zero
/// are still stored when they belong to the structural support of the row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseParamRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseParamRow {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), values.len());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn clear(&mut self) {
        self.indices.clear();
        self.values.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Inner product with a dense vector.
    #[inline]
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(k, v)| v * dense[k]).sum()
    }

    /// `dense += alpha * self`
    #[inline]
    pub fn axpy_into(&self, alpha: f64, dense: &mut [f64]) {
        for (k, v) in self.iter() {
            dense[k] += alpha * v;
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.axpy_into(1.0, &mut out);
        out
    }
}

/// A discrete-time parametric dynamical system.
pub trait DynamicalSystem {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    /// Next state `f(h, x, theta)`.
    fn step(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<f64>>;

    /// Dense state Jacobian, entry `(i, j) = df_i/dh_j`.
    fn jacobian_state(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Matrix>;

    /// `(df/dh) v`
    fn jvp_state(&self, h: &[f64], x: &[f64], theta: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// `u^T (df/dh)`
    fn vjp_state(&self, h: &[f64], x: &[f64], theta: &[f64], u: &[f64]) -> Result<Vec<f64>>;

    /// One sparse row `df_i/dtheta` per state unit.
    fn param_rows(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<SparseParamRow>>;

    /// Like [`param_rows`](Self::param_rows) but reuses the allocations in `rows`.
    fn fill_param_rows(
        &self,
        h: &[f64],
        x: &[f64],
        theta: &[f64],
        rows: &mut Vec<SparseParamRow>,
    ) -> Result<()> {
        *rows = self.param_rows(h, x, theta)?;
        Ok(())
    }

    fn check_dims(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<()> {
        check_len("state", self.state_dim(), h.len())?;
        check_len("input", self.input_dim(), x.len())?;
        check_len("parameters", self.param_dim(), theta.len())
    }
}
