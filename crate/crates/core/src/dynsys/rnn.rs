use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Activation, DynamicalSystem, SparseParamRow};
use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;

/// Recurrent network on pre-activations:
///
/// `h_i(t+1) = alpha_i h_i(t) + b_i + sum_{j->i} W_ji sigma(h_j(t)) + sum_l r_li x_l(t)`
///
/// with `alpha = 0` for the vanilla network. The leak coefficients are part of
/// the architecture and are never trained.
///
/// Flat parameter layout: all biases `b`, then `W` in `(j, i)` lexicographic
/// edge order, then `r` in `(l, i)` order.
#[derive(Debug, Clone)]
pub struct Rnn {
    n_units: usize,
    n_inputs: usize,
    activation: Activation,
    edges: Vec<(usize, usize)>,
    /// Per target unit `i`: `(edge index, source j)` in increasing edge order.
    incoming: Vec<Vec<(usize, usize)>>,
    leak: Option<Vec<f64>>,
}

impl Rnn {
    /// Builds a network over an arbitrary edge list of `(source j, target i)`.
    pub fn new(
        n_units: usize,
        n_inputs: usize,
        activation: Activation,
        mut edges: Vec<(usize, usize)>,
        leak: Option<Vec<f64>>,
    ) -> Result<Self> {
        if n_units == 0 {
            return Err(Error::Config("network needs at least one unit".into()));
        }
        edges.sort_unstable();
        edges.dedup();
        if let Some(&(j, i)) = edges.iter().find(|&&(j, i)| j >= n_units || i >= n_units) {
            return Err(Error::Config(format!("edge ({j} -> {i}) outside {n_units} units")));
        }
        if let Some(alpha) = &leak {
            check_len("leak coefficients", n_units, alpha.len())?;
            if let Some(a) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return Err(Error::Config(format!("leak coefficient {a} outside [0, 1]")));
            }
        }
        let mut incoming = vec![Vec::new(); n_units];
        for (e, &(j, i)) in edges.iter().enumerate() {
            incoming[i].push((e, j));
        }
        Ok(Self {
            n_units,
            n_inputs,
            activation,
            edges,
            incoming,
            leak,
        })
    }

    fn full_edges(n_units: usize) -> Vec<(usize, usize)> {
        (0..n_units)
            .flat_map(|j| (0..n_units).map(move |i| (j, i)))
            .collect()
    }

    /// Fully connected vanilla network.
    pub fn fully_connected(n_units: usize, n_inputs: usize, activation: Activation) -> Result<Self> {
        Self::new(n_units, n_inputs, activation, Self::full_edges(n_units), None)
    }

    /// Fully connected leaky network with the given fixed leak coefficients.
    pub fn leaky(
        n_units: usize,
        n_inputs: usize,
        activation: Activation,
        leak: Vec<f64>,
    ) -> Result<Self> {
        Self::new(n_units, n_inputs, activation, Self::full_edges(n_units), Some(leak))
    }

    /// Fully connected leaky network with each `alpha_i` drawn uniformly in `(0, 1)`.
    pub fn leaky_random<R: Rng + ?Sized>(
        n_units: usize,
        n_inputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let leak = (0..n_units).map(|_| rng.random::<f64>()).collect();
        Self::leaky(n_units, n_inputs, activation, leak)
    }

    /// Fully connected leaky network with each `alpha_i` drawn uniformly in `[lo, hi)`.
    pub fn leaky_uniform<R: Rng + ?Sized>(
        n_units: usize,
        n_inputs: usize,
        activation: Activation,
        (lo, hi): (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("empty leak range [{lo}, {hi})")));
        }
        let leak = (0..n_units).map(|_| rng.random_range(lo..hi)).collect();
        Self::leaky(n_units, n_inputs, activation, leak)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn leak(&self) -> Option<&[f64]> {
        self.leak.as_deref()
    }

    pub fn bias_index(&self, i: usize) -> usize {
        i
    }

    pub fn edge_index(&self, edge: usize) -> usize {
        self.n_units + edge
    }

    pub fn input_index(&self, l: usize, i: usize) -> usize {
        self.n_units + self.edges.len() + l * self.n_units + i
    }

    /// Gaussian initialization: `W ~ N(0, 1/n_units)`, `r ~ N(0, 1/n_inputs)`, `b = 0`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> InternalParams {
        let w_dist = Normal::new(0.0, 1.0 / (self.n_units as f64).sqrt()).expect("finite std");
        let r_std = 1.0 / (self.n_inputs.max(1) as f64).sqrt();
        let r_dist = Normal::new(0.0, r_std).expect("finite std");
        InternalParams {
            bias: vec![0.0; self.n_units],
            recurrent: (0..self.edges.len()).map(|_| w_dist.sample(rng)).collect(),
            input: (0..self.n_inputs * self.n_units)
                .map(|_| r_dist.sample(rng))
                .collect(),
        }
    }

    fn recurrent<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.n_units..self.n_units + self.edges.len()]
    }

    fn input_weights<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.n_units + self.edges.len()..]
    }
}

/// Trainable parameters of an [`Rnn`] in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalParams {
    /// `b_i`, one per unit.
    pub bias: Vec<f64>,
    /// `W_ji`, one per edge in the network's edge order.
    pub recurrent: Vec<f64>,
    /// `r_li` stored at `l * n_units + i`.
    pub input: Vec<f64>,
}

impl InternalParams {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.bias.len() + self.recurrent.len() + self.input.len());
        out.extend_from_slice(&self.bias);
        out.extend_from_slice(&self.recurrent);
        out.extend_from_slice(&self.input);
        out
    }

    pub fn from_flat(rnn: &Rnn, flat: &[f64]) -> Result<Self> {
        check_len("parameters", rnn.param_dim(), flat.len())?;
        let n = rnn.n_units;
        let e = rnn.edges.len();
        Ok(Self {
            bias: flat[..n].to_vec(),
            recurrent: flat[n..n + e].to_vec(),
            input: flat[n + e..].to_vec(),
        })
    }
}

impl DynamicalSystem for Rnn {
    fn state_dim(&self) -> usize {
        self.n_units
    }

    fn input_dim(&self) -> usize {
        self.n_inputs
    }

    fn param_dim(&self) -> usize {
        self.n_units + self.edges.len() + self.n_inputs * self.n_units
    }

    fn step(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(h, x, theta)?;
        let n = self.n_units;
        let mut out = theta[..n].to_vec();
        if let Some(alpha) = &self.leak {
            for i in 0..n {
                out[i] += alpha[i] * h[i];
            }
        }
        let act: Vec<f64> = h.iter().map(|&v| self.activation.value(v)).collect();
        let w = self.recurrent(theta);
        for (e, &(j, i)) in self.edges.iter().enumerate() {
            out[i] += w[e] * act[j];
        }
        let r = self.input_weights(theta);
        for (l, &xl) in x.iter().enumerate() {
            if xl != 0.0 {
                crate::linalg::axpy(xl, &r[l * n..(l + 1) * n], &mut out);
            }
        }
        Ok(out)
    }

    fn jacobian_state(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Matrix> {
        self.check_dims(h, x, theta)?;
        let n = self.n_units;
        let mut jac = Matrix::zeros(n, n);
        let w = self.recurrent(theta);
        for (e, &(j, i)) in self.edges.iter().enumerate() {
            jac[(i, j)] += w[e] * self.activation.derivative(h[j]);
        }
        if let Some(alpha) = &self.leak {
            for i in 0..n {
                jac[(i, i)] += alpha[i];
            }
        }
        Ok(jac)
    }

    fn jvp_state(&self, h: &[f64], x: &[f64], theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(h, x, theta)?;
        check_len("tangent", self.n_units, v.len())?;
        let scaled: Vec<f64> = h
            .iter()
            .zip(v)
            .map(|(&hj, &vj)| self.activation.derivative(hj) * vj)
            .collect();
        let mut out = match &self.leak {
            Some(alpha) => alpha.iter().zip(v).map(|(a, vi)| a * vi).collect(),
            None => vec![0.0; self.n_units],
        };
        let w = self.recurrent(theta);
        for (e, &(j, i)) in self.edges.iter().enumerate() {
            out[i] += w[e] * scaled[j];
        }
        Ok(out)
    }

    fn vjp_state(&self, h: &[f64], x: &[f64], theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(h, x, theta)?;
        check_len("cotangent", self.n_units, u.len())?;
        let mut acc = vec![0.0; self.n_units];
        let w = self.recurrent(theta);
        for (e, &(j, i)) in self.edges.iter().enumerate() {
            acc[j] += w[e] * u[i];
        }
        for (j, a) in acc.iter_mut().enumerate() {
            *a *= self.activation.derivative(h[j]);
        }
        if let Some(alpha) = &self.leak {
            for j in 0..self.n_units {
                acc[j] += alpha[j] * u[j];
            }
        }
        Ok(acc)
    }

    fn param_rows(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<SparseParamRow>> {
        let mut rows = Vec::new();
        self.fill_param_rows(h, x, theta, &mut rows)?;
        Ok(rows)
    }

    fn fill_param_rows(
        &self,
        h: &[f64],
        x: &[f64],
        theta: &[f64],
        rows: &mut Vec<SparseParamRow>,
    ) -> Result<()> {
        self.check_dims(h, x, theta)?;
        let n = self.n_units;
        rows.resize_with(n, SparseParamRow::default);
        let act: Vec<f64> = h.iter().map(|&v| self.activation.value(v)).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            row.clear();
            row.indices.push(self.bias_index(i));
            row.values.push(1.0);
            for &(e, j) in &self.incoming[i] {
                row.indices.push(self.edge_index(e));
                row.values.push(act[j]);
            }
            for (l, &xl) in x.iter().enumerate() {
                row.indices.push(self.input_index(l, i));
                row.values.push(xl);
            }
        }
        Ok(())
    }
}
