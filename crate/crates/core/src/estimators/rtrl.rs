use crate::dynsys::DynamicalSystem;
use crate::error::{check_len, Result};
use crate::linalg::{self, Matrix};

/// Exact sensitivity `G = dh/dtheta`, `dim h x dim theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullJacobian {
    pub g: Matrix,
}

impl FullJacobian {
    pub fn zeros(state_dim: usize, param_dim: usize) -> Self {
        Self {
            g: Matrix::zeros(state_dim, param_dim),
        }
    }

    /// `(H G)^T`, the loss gradient with respect to `theta` given `H = dl/dh`.
    pub fn loss_gradient(&self, grad_h: &[f64]) -> Vec<f64> {
        self.g.vec_mul(grad_h)
    }
}

/// `G(t+1) = df/dh G(t) + df/dtheta`
pub fn rtrl_step<S: DynamicalSystem + ?Sized>(
    sys: &S,
    g: &FullJacobian,
    h: &[f64],
    x: &[f64],
    theta: &[f64],
) -> Result<FullJacobian> {
    check_len("jacobian rows", sys.state_dim(), g.g.rows())?;
    check_len("jacobian columns", sys.param_dim(), g.g.cols())?;
    let jac = sys.jacobian_state(h, x, theta)?;
    let mut next = jac.matmul(&g.g);
    for (i, row) in sys.param_rows(h, x, theta)?.iter().enumerate() {
        row.axpy_into(1.0, next.row_mut(i));
    }
    Ok(FullJacobian { g: next })
}

/// Accumulates `sum_t dl_t/dtheta` exactly; used as a reference gradient.
pub fn accumulate_gradient(acc: &mut [f64], g: &FullJacobian, grad_h: &[f64]) {
    linalg::axpy(1.0, &g.loss_gradient(grad_h), acc);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{Activation, LinearLeak, Rnn};

    #[test]
    fn first_step_from_zero_is_param_rows() {
        let rnn = Rnn::fully_connected(3, 2, Activation::Tanh).unwrap();
        let theta: Vec<f64> = (0..rnn.param_dim()).map(|k| (k as f64 * 0.37).sin()).collect();
        let h = [0.0; 3];
        let x = [1.0, 0.0];
        let g1 = rtrl_step(&rnn, &FullJacobian::zeros(3, rnn.param_dim()), &h, &x, &theta).unwrap();
        for (i, row) in rnn.param_rows(&h, &x, &theta).unwrap().iter().enumerate() {
            assert_eq!(g1.g.row(i), row.to_dense(rnn.param_dim()).as_slice());
        }
    }

    #[test]
    fn linear_leak_geometric_sum() {
        // G(t) = (1/alpha)(1 - (1 - alpha)^t) Id; alpha = 0.5, t = 3 -> 1.75 Id
        let sys = LinearLeak::new(2, 0.5).unwrap();
        let theta = [1.0, 1.0];
        let mut h = vec![0.0, 0.0];
        let mut g = FullJacobian::zeros(2, 2);
        for _ in 0..3 {
            g = rtrl_step(&sys, &g, &h, &[], &theta).unwrap();
            h = sys.step(&h, &[], &theta).unwrap();
        }
        let mut expect = Matrix::identity(2);
        linalg::scale(1.75, expect.as_mut_slice());
        assert!(g.g.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let sys = LinearLeak::new(2, 0.5).unwrap();
        assert!(rtrl_step(&sys, &FullJacobian::zeros(3, 2), &[0.0; 2], &[], &[0.0; 2]).is_err());
    }
}
