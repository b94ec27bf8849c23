//! Softmax character readout `yhat_z = phi_z + sum_i phi_iz sigma(h_i)` with
//! log-loss measured in bits.
//!
//! Flat output-parameter layout: the `A` symbol biases `phi_z`, then the
//! weights `phi_iz` at `A + i * A + z`.

use std::f64::consts::LN_2;
use std::sync::Arc;

use crate::dynsys::Activation;
use crate::error::{check_len, Error, Result};
use crate::estimators::kalman::{BlockLayout, CovarianceStructure, InverseCovariance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Readout {
    n_units: usize,
    n_symbols: usize,
    activation: Activation,
}

/// Output parameters in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams {
    pub bias: Vec<f64>,
    /// `phi_iz` at `i * n_symbols + z`.
    pub weights: Vec<f64>,
}

impl OutputParams {
    pub fn zeros(readout: &Readout) -> Self {
        Self {
            bias: vec![0.0; readout.n_symbols],
            weights: vec![0.0; readout.n_units * readout.n_symbols],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.bias.clone();
        out.extend_from_slice(&self.weights);
        out
    }

    pub fn from_flat(readout: &Readout, flat: &[f64]) -> Result<Self> {
        check_len("output parameters", readout.param_dim(), flat.len())?;
        Ok(Self {
            bias: flat[..readout.n_symbols].to_vec(),
            weights: flat[readout.n_symbols..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub activations: Vec<f64>,
    log_normalizer: f64,
}

impl Prediction {
    /// `-log2 p(y)`
    pub fn loss_bits(&self, y: usize) -> f64 {
        (self.log_normalizer - self.scores[y]) / LN_2
    }
}

/// Loss of one observation and its gradients, all in bits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    /// `dl/dphi`, dense over the flat output parameters.
    pub grad_phi: Vec<f64>,
    /// `H = dl/dh`
    pub grad_h: Vec<f64>,
}

impl Readout {
    pub fn new(n_units: usize, n_symbols: usize, activation: Activation) -> Self {
        Self {
            n_units,
            n_symbols,
            activation,
        }
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn param_dim(&self) -> usize {
        self.n_symbols * (1 + self.n_units)
    }

    pub fn weight_index(&self, i: usize, z: usize) -> usize {
        self.n_symbols + i * self.n_symbols + z
    }

    pub fn predict(&self, h: &[f64], phi: &[f64]) -> Result<Prediction> {
        check_len("state", self.n_units, h.len())?;
        check_len("output parameters", self.param_dim(), phi.len())?;
        let a = self.n_symbols;
        let activations: Vec<f64> = h.iter().map(|&v| self.activation.value(v)).collect();
        let mut scores = phi[..a].to_vec();
        for (i, &ai) in activations.iter().enumerate() {
            let row = &phi[a + i * a..a + (i + 1) * a];
            crate::linalg::axpy(ai, row, &mut scores);
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let probs = exp.iter().map(|e| e / sum).collect();
        Ok(Prediction {
            scores,
            probs,
            activations,
            log_normalizer: max + sum.ln(),
        })
    }

    pub fn loss_and_grads(&self, pred: &Prediction, y: usize, h: &[f64], phi: &[f64]) -> Result<LossGrads> {
        if y >= self.n_symbols {
            return Err(Error::UnknownSymbol {
                symbol: y,
                size: self.n_symbols,
            });
        }
        check_len("state", self.n_units, h.len())?;
        check_len("output parameters", self.param_dim(), phi.len())?;
        let a = self.n_symbols;
        // dl/dscore_z = (p_z - [z = y]) / ln 2
        let mut dscore: Vec<f64> = pred.probs.iter().map(|p| p / LN_2).collect();
        dscore[y] -= 1.0 / LN_2;

        let mut grad_phi = vec![0.0; self.param_dim()];
        grad_phi[..a].copy_from_slice(&dscore);
        let mut grad_h = vec![0.0; self.n_units];
        for i in 0..self.n_units {
            let ai = pred.activations[i];
            let row = &phi[a + i * a..a + (i + 1) * a];
            let g = &mut grad_phi[a + i * a..a + (i + 1) * a];
            let mut back = 0.0;
            for z in 0..a {
                g[z] = dscore[z] * ai;
                back += dscore[z] * row[z];
            }
            grad_h[i] = back * self.activation.derivative(h[i]);
        }
        Ok(LossGrads {
            loss: pred.loss_bits(y),
            grad_phi,
            grad_h,
        })
    }

    /// One block per symbol: `{phi_z} U {phi_iz : i}`.
    pub fn block_layout(&self) -> Arc<BlockLayout> {
        let blocks = (0..self.n_symbols)
            .map(|z| {
                std::iter::once(z)
                    .chain((0..self.n_units).map(|i| self.weight_index(i, z)))
                    .collect()
            })
            .collect();
        Arc::new(BlockLayout::new(self.param_dim(), blocks).expect("symbol blocks partition phi"))
    }

    pub fn empty_information(&self, structure: CovarianceStructure) -> InverseCovariance {
        match structure {
            CovarianceStructure::Diagonal => InverseCovariance::zeros_diagonal(self.param_dim()),
            CovarianceStructure::Blocks => InverseCovariance::zeros_blocks(self.block_layout()),
        }
    }
}

/// Outer-product Fisher increment `g g^T`, reduced to the structure of `like`.
///
/// With the outer-product approximation `I = (dl/dyhat)(dl/dyhat)^T`, the
/// information update through any linear map `M` (e.g. `dyhat/dphi`, or
/// `dyhat/dh G~` for the internal parameters) collapses to the outer product
/// of the loss gradient `g = (dl/dyhat) M`.
pub fn fisher_outer(like: &InverseCovariance, g: &[f64]) -> Result<InverseCovariance> {
    check_len("gradient", like.dim(), g.len())?;
    let mut inc = like.zeros_like();
    inc.add_outer(g);
    Ok(inc)
}
