use super::{DynamicalSystem, SparseParamRow};
use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;

/// Linear leaky system `h(t+1) = (1 - alpha) h(t) + theta` with `h, theta`
/// in `R^n` and no input. Converges to `theta / alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLeak {
    n: usize,
    alpha: f64,
}

impl LinearLeak {
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("leak alpha must lie in (0, 1], got {alpha}")));
        }
        Ok(Self { n, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl DynamicalSystem for LinearLeak {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        0
    }

    fn param_dim(&self) -> usize {
        self.n
    }

    fn step(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(h, x, theta)?;
        let keep = 1.0 - self.alpha;
        Ok(h.iter().zip(theta).map(|(hi, ti)| keep * hi + ti).collect())
    }

    fn jacobian_state(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Matrix> {
        self.check_dims(h, x, theta)?;
        let mut m = Matrix::identity(self.n);
        crate::linalg::scale(1.0 - self.alpha, m.as_mut_slice());
        Ok(m)
    }

    fn jvp_state(&self, h: &[f64], x: &[f64], theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(h, x, theta)?;
        check_len("tangent", self.n, v.len())?;
        Ok(v.iter().map(|vi| (1.0 - self.alpha) * vi).collect())
    }

    fn vjp_state(&self, h: &[f64], x: &[f64], theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.jvp_state(h, x, theta, u)
    }

    fn param_rows(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<SparseParamRow>> {
        self.check_dims(h, x, theta)?;
        Ok((0..self.n)
            .map(|i| SparseParamRow::new(vec![i], vec![1.0]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_to_theta_over_alpha() {
        let sys = LinearLeak::new(3, 0.5).unwrap();
        let theta = vec![1.0; 3];
        let mut h = vec![0.0; 3];
        for _ in 0..200 {
            h = sys.step(&h, &[], &theta).unwrap();
        }
        for hi in h {
            assert!((hi - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_alpha_outside_unit_interval() {
        assert!(LinearLeak::new(2, 0.0).is_err());
        assert!(LinearLeak::new(2, 1.5).is_err());
    }
}
