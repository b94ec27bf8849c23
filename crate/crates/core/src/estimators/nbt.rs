//! The NoBackTrack sensitivity estimate
//! `G~ = (1/K) sum_k vbar_k wbar_k^T + sum_i e_i w_i^T`.
//!
//! Each step the estimate is reduced back to pure rank-one form with the sign
//! trick (the rows `w_i` are folded into every `(vbar_k, wbar_k)` pair with
//! independent signs), then pushed through the transition: `vbar` through
//! `df/dh`, and the new rows `w_i = df_i/dtheta` appended. Every reduction
//! preserves the expectation, so `E G~(t) = G(t)`.

use crate::dynsys::{DynamicalSystem, SparseParamRow};
use crate::error::{check_len, Result};
use crate::estimators::kalman::Precision;
use crate::linalg::{self, Matrix};
use crate::rankone::{balanced_scaling, QuadraticForm, SCALING_EPS};
use crate::rng::SignSource;

/// How the reduction scales each term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScalingRule {
    /// Balance Euclidean norms, with `|e_i| = 1`.
    #[default]
    Euclidean,
    /// Balance the norms induced by the Kalman covariance (reparameterization invariant).
    Invariant,
    /// No scaling (`rho = 1`); unbiased but with variance growing over time.
    Unit,
}

/// Scalings for one rank-one pair: `rho_bar` for `(vbar, wbar)` and `rho_i`
/// for each `(e_i, w_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalings {
    pub bar: f64,
    pub units: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOnePair {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NbtState {
    pub pairs: Vec<RankOnePair>,
    /// `w_i = df_i/dtheta` from the last transition; empty right after a reduction.
    pub rows: Vec<SparseParamRow>,
    state_dim: usize,
    param_dim: usize,
}

impl NbtState {
    /// All-zero estimate with `rank` pairs.
    pub fn new(state_dim: usize, param_dim: usize, rank: usize) -> Self {
        assert!(rank >= 1, "rank must be at least 1");
        Self {
            pairs: (0..rank)
                .map(|_| RankOnePair {
                    v: vec![0.0; state_dim],
                    w: vec![0.0; param_dim],
                })
                .collect(),
            rows: Vec::new(),
            state_dim,
            param_dim,
        }
    }

    pub fn rank(&self) -> usize {
        self.pairs.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    /// `(H G~)^T = (1/K) sum_k (H . vbar_k) wbar_k + sum_i H_i w_i`
    pub fn direction(&self, grad_h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.param_dim];
        let k = self.pairs.len() as f64;
        for p in &self.pairs {
            linalg::axpy(linalg::dot(grad_h, &p.v) / k, &p.w, &mut out);
        }
        for (hi, row) in grad_h.iter().zip(&self.rows) {
            row.axpy_into(*hi, &mut out);
        }
        out
    }

    fn row_norm(&self, i: usize) -> f64 {
        self.rows.get(i).map_or(0.0, |r| r.norm_sq().sqrt())
    }

    pub fn euclidean_scalings(&self, pair: usize) -> Scalings {
        let p = &self.pairs[pair];
        Scalings {
            bar: balanced_scaling(linalg::norm(&p.v), linalg::norm(&p.w)),
            units: (0..self.state_dim)
                .map(|i| balanced_scaling(1.0, self.row_norm(i)))
                .collect(),
        }
    }

    pub fn unit_scalings(&self) -> Scalings {
        Scalings {
            bar: 1.0,
            units: vec![1.0; self.state_dim],
        }
    }

    pub fn scalings(&self, rule: ScalingRule, precision: Option<&Precision>) -> Vec<Scalings> {
        (0..self.rank())
            .map(|k| match (rule, precision) {
                (ScalingRule::Unit, _) => self.unit_scalings(),
                (ScalingRule::Invariant, Some(c)) => invariant_scalings(self, k, c),
                _ => self.euclidean_scalings(k),
            })
            .collect()
    }

    /// Reduction step: for every pair,
    /// `vbar <- rho_bar vbar + sum_i eps_i rho_i e_i` and
    /// `wbar <- wbar / rho_bar + sum_i eps_i w_i / rho_i`, then `w_i <- 0`.
    ///
    /// The `(vbar, wbar)` term carries no sign of its own: flipping both of its
    /// factors leaves the product unchanged, so one sign per state unit suffices.
    pub fn reduce(&mut self, scalings: &[Scalings], signs: &mut dyn SignSource) {
        assert_eq!(scalings.len(), self.pairs.len(), "one scaling set per pair");
        let mut eps = vec![0.0; self.state_dim];
        for (pair, sc) in self.pairs.iter_mut().zip(scalings) {
            signs.fill_signs(&mut eps);
            let inv_bar = 1.0 / sc.bar;
            for (i, vi) in pair.v.iter_mut().enumerate() {
                *vi = sc.bar * *vi + eps[i] * sc.units[i];
            }
            linalg::scale(inv_bar, &mut pair.w);
            for (i, row) in self.rows.iter().enumerate() {
                row.axpy_into(eps[i] / sc.units[i], &mut pair.w);
            }
        }
        self.rows.clear();
    }

    /// Transition step at `(h, x, theta)`: `vbar <- df/dh vbar`, `w_i <- df_i/dtheta`.
    /// Returns the next state `f(h, x, theta)`.
    pub fn transition<S: DynamicalSystem + ?Sized>(
        &mut self,
        sys: &S,
        h: &[f64],
        x: &[f64],
        theta: &[f64],
    ) -> Result<Vec<f64>> {
        check_len("estimator state dim", self.state_dim, sys.state_dim())?;
        check_len("estimator param dim", self.param_dim, sys.param_dim())?;
        let next = sys.step(h, x, theta)?;
        for p in &mut self.pairs {
            p.v = sys.jvp_state(h, x, theta, &p.v)?;
        }
        sys.fill_param_rows(h, x, theta, &mut self.rows)?;
        Ok(next)
    }

    /// Dense `G~` for one pair: `vbar_k wbar_k^T + sum_i e_i w_i^T`.
    pub fn pair_estimate(&self, pair: usize) -> Matrix {
        let p = &self.pairs[pair];
        let mut m = Matrix::outer(&p.v, &p.w);
        for (i, row) in self.rows.iter().enumerate() {
            row.axpy_into(1.0, m.row_mut(i));
        }
        m
    }

    /// Dense `G~` averaged over pairs.
    pub fn estimate(&self) -> Matrix {
        let mut m = Matrix::zeros(self.state_dim, self.param_dim);
        let k = self.pairs.len() as f64;
        for p in &self.pairs {
            for (i, &vi) in p.v.iter().enumerate() {
                linalg::axpy(vi / k, &p.w, m.row_mut(i));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            row.axpy_into(1.0, m.row_mut(i));
        }
        m
    }

    /// Largest absolute value over all stored factors.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for p in &self.pairs {
            m = m.max(linalg::max_abs(&p.v)).max(linalg::max_abs(&p.w));
        }
        for r in &self.rows {
            m = m.max(linalg::max_abs(&r.values));
        }
        m
    }
}

/// `diag(G~ C G~^T)` for one pair, with `C = (J + Lambda)^-1`, using the
/// structure of `G~`: row `i` is `vbar_i wbar + w_i`, so the entry is
/// `vbar_i^2 (wbar' C wbar) + 2 vbar_i (wbar' C w_i) + w_i' C w_i`.
pub fn state_covariance_diag(state: &NbtState, pair: usize, cov: &Precision) -> Vec<f64> {
    let p = &state.pairs[pair];
    let c_wbar = cov.solve(&p.w);
    let q_bar = linalg::dot(&p.w, &c_wbar);
    (0..state.state_dim)
        .map(|i| {
            let vi = p.v[i];
            let (cross, q_row) = match state.rows.get(i) {
                Some(row) if !row.is_empty() => (row.dot_dense(&c_wbar), cov.quad_sparse(row)),
                _ => (0.0, 0.0),
            };
            vi * vi * q_bar + 2.0 * vi * cross + q_row
        })
        .collect()
}

/// Scalings balancing the norms induced by the filter covariance:
/// `|w|^2 = w' C w` on the parameter side and `|v|^2 = v' J_h v` on the state
/// side, with `J_h ~ diag(G~ C G~^T)^-1`.
pub fn invariant_scalings(state: &NbtState, pair: usize, cov: &Precision) -> Scalings {
    let d = state_covariance_diag(state, pair, cov);
    let p = &state.pairs[pair];
    let norm_wbar = cov.quad_dense(&p.w).max(0.0).sqrt();
    let norm_vbar = p
        .v
        .iter()
        .zip(&d)
        .map(|(vi, di)| vi * vi / (di + SCALING_EPS))
        .sum::<f64>()
        .sqrt();
    let units = (0..state.state_dim)
        .map(|i| {
            let norm_e = (1.0 / (d[i] + SCALING_EPS)).sqrt();
            let norm_w = match state.rows.get(i) {
                Some(row) => cov.quad_sparse(row).max(0.0).sqrt(),
                None => 0.0,
            };
            balanced_scaling(norm_e, norm_w)
        })
        .collect();
    Scalings {
        bar: balanced_scaling(norm_vbar, norm_wbar),
        units,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{Activation, LinearLeak, Rnn};
    use crate::estimators::kalman::InverseCovariance;
    use crate::estimators::rtrl::{rtrl_step, FullJacobian};
    use crate::rng::{self, MaskSigns, RandomSigns};
    use rand::Rng;

    #[test]
    fn fresh_state_is_zero() {
        let s = NbtState::new(3, 7, 2);
        assert_eq!(s.estimate(), Matrix::zeros(3, 7));
        assert!(s.rows.is_empty());
        assert_eq!(s.direction(&[1.0, 2.0, 3.0]), vec![0.0; 7]);
    }

    #[test]
    fn direction_matches_dense_estimate() {
        let mut r = rng::stream(1, 0);
        let rnn = Rnn::fully_connected(3, 2, Activation::Tanh).unwrap();
        let theta: Vec<f64> = (0..rnn.param_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut s = NbtState::new(3, rnn.param_dim(), 2);
        let mut signs = RandomSigns::new(1, 16);
        let mut h = vec![0.1, -0.4, 0.3];
        for _ in 0..4 {
            let sc = s.scalings(ScalingRule::Euclidean, None);
            s.reduce(&sc, &mut signs);
            h = s.transition(&rnn, &h, &[0.0, 1.0], &theta).unwrap();
        }
        let grad_h = [0.5, -1.0, 2.0];
        let dense = s.estimate().vec_mul(&grad_h);
        for (a, b) in s.direction(&grad_h).iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_system_scaling_converges_to_inverse_sqrt_keep() {
        // after the first real reduction vbar = wbar, then vbar = (1 - alpha) wbar
        let sys = LinearLeak::new(4, 0.5).unwrap();
        let theta = vec![1.0; 4];
        let mut s = NbtState::new(4, 4, 1);
        let mut signs = RandomSigns::new(3, 16);
        let mut h = vec![0.0; 4];
        let mut last = 0.0;
        for _ in 0..10 {
            let sc = s.scalings(ScalingRule::Euclidean, None);
            last = sc[0].bar;
            s.reduce(&sc, &mut signs);
            h = s.transition(&sys, &h, &[], &theta).unwrap();
        }
        assert!((last - 2f64.sqrt()).abs() < 1e-9, "rho_bar {last}");
    }

    #[test]
    fn exhaustive_signs_are_unbiased_on_two_units() {
        let mut r = rng::stream(2, 0);
        let rnn = Rnn::leaky_random(2, 1, Activation::Tanh, &mut r).unwrap();
        let theta: Vec<f64> = (0..rnn.param_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let inputs = [[1.0], [-0.5], [0.25]];

        let mut g = FullJacobian::zeros(2, rnn.param_dim());
        let mut h = vec![0.0; 2];
        for x in &inputs {
            g = rtrl_step(&rnn, &g, &h, x, &theta).unwrap();
            h = rnn.step(&h, x, &theta).unwrap();
        }

        for rule in [ScalingRule::Euclidean, ScalingRule::Unit] {
            let mut mean = Matrix::zeros(2, rnn.param_dim());
            for mask in 0..64u64 {
                let mut signs = MaskSigns::new(mask);
                let mut s = NbtState::new(2, rnn.param_dim(), 1);
                let mut h = vec![0.0; 2];
                for x in &inputs {
                    let sc = s.scalings(rule, None);
                    s.reduce(&sc, &mut signs);
                    h = s.transition(&rnn, &h, x, &theta).unwrap();
                }
                assert_eq!(signs.consumed(), 6);
                linalg::axpy(1.0 / 64.0, s.estimate().as_slice(), mean.as_mut_slice());
            }
            assert!(mean.max_abs_diff(&g.g) < 1e-12, "{rule:?}");
        }
    }

    #[test]
    fn invariant_scalings_basis_case() {
        // C = Id, single row w_1 = e_1, vbar = 0: diag entry 1 and rho_1 = 1
        let mut s = NbtState::new(1, 3, 1);
        s.rows = vec![SparseParamRow::new(vec![0], vec![1.0])];
        let cov = InverseCovariance::zeros_diagonal(3).factor(&[1.0; 3]).unwrap();
        assert!((state_covariance_diag(&s, 0, &cov)[0] - 1.0).abs() < 1e-15);
        let sc = invariant_scalings(&s, 0, &cov);
        assert!((sc.units[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn structured_diag_matches_dense() {
        let mut r = rng::stream(4, 0);
        let rnn = Rnn::fully_connected(3, 2, Activation::Tanh).unwrap();
        let p = rnn.param_dim();
        let mut s = NbtState::new(3, p, 1);
        s.pairs[0].v = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        s.pairs[0].w = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        s.rows = rnn.param_rows(&h, &[1.0, 0.0], &theta).unwrap();

        let layout = std::sync::Arc::new(
            crate::estimators::kalman::BlockLayout::from_row_supports(p, &s.rows).unwrap(),
        );
        let mut j_diag = InverseCovariance::zeros_diagonal(p);
        let mut j_block = InverseCovariance::zeros_blocks(layout);
        for _ in 0..3 {
            let g: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
            j_diag.add_outer(&g);
            j_block.add_outer(&g);
        }
        let prior = vec![0.3; p];
        for j in [j_diag, j_block] {
            let cov = j.factor(&prior).unwrap();
            let fast = state_covariance_diag(&s, 0, &cov);
            // dense oracle: G C G^T with C from solving against each column
            let g = s.pair_estimate(0);
            for i in 0..3 {
                let c_row = cov.solve(g.row(i));
                let dense = linalg::dot(g.row(i), &c_row);
                assert!((fast[i] - dense).abs() < 1e-10 * dense.abs().max(1.0));
            }
        }
    }
}
