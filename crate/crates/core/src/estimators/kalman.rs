//! Structured inverse covariances for the information-filter update
//! `J <- (1 - gamma) J + MatrixReduce(g g^T)`, `theta <- theta - (J + Lambda)^-1 g`.
//!
//! Two reductions are offered. `Diagonal` keeps `diag(g g^T) = g^2`. `Blocks`
//! keeps the full outer product inside each block of a partition of the
//! parameters (one block per unit: everything feeding that unit). Both cost
//! linear time in the parameter count for bounded block size, and both stay
//! positive semidefinite, so `J + Lambda` is invertible for `Lambda > 0`.

use std::sync::Arc;

use crate::dynsys::SparseParamRow;
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rankone::QuadraticForm;

/// Which entries of `g g^T` the inverse covariance keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceStructure {
    #[default]
    Diagonal,
    Blocks,
}

/// A partition of `0..dim` into index blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    dim: usize,
    blocks: Vec<Vec<usize>>,
    /// `(block, position within block)` for every index.
    owner: Vec<(usize, usize)>,
}

impl BlockLayout {
    /// Blocks are taken as given; every index must appear exactly once.
    pub fn new(dim: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut owner = vec![(usize::MAX, 0); dim];
        for (b, block) in blocks.iter().enumerate() {
            for (pos, &k) in block.iter().enumerate() {
                if k >= dim || owner[k].0 != usize::MAX {
                    return Err(Error::Config(format!("index {k} is out of range or in two blocks")));
                }
                owner[k] = (b, pos);
            }
        }
        if let Some(k) = owner.iter().position(|o| o.0 == usize::MAX) {
            return Err(Error::Config(format!("index {k} belongs to no block")));
        }
        Ok(Self { dim, blocks, owner })
    }

    /// One block per row support; indices not covered by any row become singletons.
    pub fn from_row_supports(dim: usize, rows: &[SparseParamRow]) -> Result<Self> {
        let mut covered = vec![false; dim];
        let mut blocks = Vec::with_capacity(rows.len());
        for row in rows {
            for &k in &row.indices {
                if k < dim {
                    covered[k] = true;
                }
            }
            blocks.push(row.indices.clone());
        }
        blocks.extend((0..dim).filter(|&k| !covered[k]).map(|k| vec![k]));
        Self::new(dim, blocks)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }
}

/// Structured approximation of an inverse covariance (information) matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum InverseCovariance {
    Diagonal(Vec<f64>),
    Blocks {
        layout: Arc<BlockLayout>,
        /// Row-major `b x b` matrix per block.
        mats: Vec<Vec<f64>>,
    },
}

impl InverseCovariance {
    pub fn zeros_diagonal(dim: usize) -> Self {
        InverseCovariance::Diagonal(vec![0.0; dim])
    }

    pub fn zeros_blocks(layout: Arc<BlockLayout>) -> Self {
        let mats = layout.blocks.iter().map(|b| vec![0.0; b.len() * b.len()]).collect();
        InverseCovariance::Blocks { layout, mats }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            InverseCovariance::Diagonal(d) => Self::zeros_diagonal(d.len()),
            InverseCovariance::Blocks { layout, .. } => Self::zeros_blocks(layout.clone()),
        }
    }

    pub fn structure(&self) -> CovarianceStructure {
        match self {
            InverseCovariance::Diagonal(_) => CovarianceStructure::Diagonal,
            InverseCovariance::Blocks { .. } => CovarianceStructure::Blocks,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InverseCovariance::Diagonal(d) => d.len(),
            InverseCovariance::Blocks { layout, .. } => layout.dim,
        }
    }

    pub fn decay(&mut self, factor: f64) {
        match self {
            InverseCovariance::Diagonal(d) => linalg::scale(factor, d),
            InverseCovariance::Blocks { mats, .. } => {
                for m in mats {
                    linalg::scale(factor, m);
                }
            }
        }
    }

    /// Adds the structured reduction of `g g^T`.
    pub fn add_outer(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.dim());
        match self {
            InverseCovariance::Diagonal(d) => {
                for (di, gi) in d.iter_mut().zip(g) {
                    *di += gi * gi;
                }
            }
            InverseCovariance::Blocks { layout, mats } => {
                for (block, m) in layout.blocks.iter().zip(mats.iter_mut()) {
                    let b = block.len();
                    for (r, &kr) in block.iter().enumerate() {
                        let gr = g[kr];
                        if gr == 0.0 {
                            continue;
                        }
                        for (c, &kc) in block.iter().enumerate() {
                            m[r * b + c] += gr * g[kc];
                        }
                    }
                }
            }
        }
    }

    /// `self += other`; both must share the same structure.
    pub fn add(&mut self, other: &InverseCovariance) -> Result<()> {
        match (self, other) {
            (InverseCovariance::Diagonal(a), InverseCovariance::Diagonal(b)) => {
                check_len("inverse covariance", a.len(), b.len())?;
                linalg::axpy(1.0, b, a);
            }
            (InverseCovariance::Blocks { layout: la, mats: ma }, InverseCovariance::Blocks { layout: lb, mats: mb })
                if la == lb =>
            {
                for (x, y) in ma.iter_mut().zip(mb) {
                    linalg::axpy(1.0, y, x);
                }
            }
            _ => return Err(Error::Config("inverse covariance structures differ".into())),
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        match self {
            InverseCovariance::Diagonal(d) => {
                for (i, &v) in d.iter().enumerate() {
                    out[(i, i)] = v;
                }
            }
            InverseCovariance::Blocks { layout, mats } => {
                for (block, m) in layout.blocks.iter().zip(mats) {
                    let b = block.len();
                    for (r, &kr) in block.iter().enumerate() {
                        for (c, &kc) in block.iter().enumerate() {
                            out[(kr, kc)] = m[r * b + c];
                        }
                    }
                }
            }
        }
        out
    }

    /// Factors `J + diag(prior)`.
    pub fn factor(&self, prior: &[f64]) -> Result<Precision> {
        check_len("prior", self.dim(), prior.len())?;
        match self {
            InverseCovariance::Diagonal(d) => {
                let mut inv = Vec::with_capacity(d.len());
                for (k, (di, pi)) in d.iter().zip(prior).enumerate() {
                    let s = di + pi;
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { block: k, pivot: s });
                    }
                    inv.push(1.0 / s);
                }
                Ok(Precision::Diagonal(inv))
            }
            InverseCovariance::Blocks { layout, mats } => {
                let mut chol = Vec::with_capacity(mats.len());
                for (bi, (block, m)) in layout.blocks.iter().zip(mats).enumerate() {
                    let b = block.len();
                    let mut a = m.clone();
                    let floor: Vec<f64> = block.iter().map(|&k| prior[k]).collect();
                    for (r, &k) in block.iter().enumerate() {
                        a[r * b + r] += prior[k];
                    }
                    linalg::cholesky_floored(&mut a, b, &floor)
                        .map_err(|pivot| Error::NotPositiveDefinite { block: bi, pivot })?;
                    chol.push(a);
                }
                Ok(Precision::Blocks {
                    layout: layout.clone(),
                    chol,
                })
            }
        }
    }
}

/// Factored `J + Lambda`; its inverse acts as the parameter covariance.
#[derive(Debug, Clone)]
pub enum Precision {
    /// Inverse diagonal entries.
    Diagonal(Vec<f64>),
    /// Lower Cholesky factor per block.
    Blocks {
        layout: Arc<BlockLayout>,
        chol: Vec<Vec<f64>>,
    },
}

impl Precision {
    pub fn dim(&self) -> usize {
        match self {
            Precision::Diagonal(d) => d.len(),
            Precision::Blocks { layout, .. } => layout.dim,
        }
    }

    /// `(J + Lambda)^-1 g`
    pub fn solve(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Precision::Diagonal(inv) => g.iter().zip(inv).map(|(a, b)| a * b).collect(),
            Precision::Blocks { layout, chol } => {
                let mut out = vec![0.0; g.len()];
                let mut buf = Vec::new();
                for (block, l) in layout.blocks.iter().zip(chol) {
                    buf.clear();
                    buf.extend(block.iter().map(|&k| g[k]));
                    linalg::cholesky_solve(l, block.len(), &mut buf);
                    for (&k, &v) in block.iter().zip(&buf) {
                        out[k] = v;
                    }
                }
                out
            }
        }
    }

    /// `(J + Lambda)^-1 w` for a sparse `w`; the result is supported on the
    /// blocks `w` touches.
    pub fn solve_sparse(&self, w: &SparseParamRow) -> SparseParamRow {
        match self {
            Precision::Diagonal(inv) => SparseParamRow {
                indices: w.indices.clone(),
                values: w.iter().map(|(k, v)| v * inv[k]).collect(),
            },
            Precision::Blocks { layout, chol } => {
                let mut touched: Vec<usize> = w.indices.iter().map(|&k| layout.owner[k].0).collect();
                touched.sort_unstable();
                touched.dedup();
                let mut pairs = Vec::new();
                for b in touched {
                    let block = &layout.blocks[b];
                    let mut buf = vec![0.0; block.len()];
                    for (k, v) in w.iter() {
                        let (ob, pos) = layout.owner[k];
                        if ob == b {
                            buf[pos] += v;
                        }
                    }
                    linalg::cholesky_solve(&chol[b], block.len(), &mut buf);
                    pairs.extend(block.iter().copied().zip(buf));
                }
                pairs.sort_unstable_by_key(|p| p.0);
                let (indices, values) = pairs.into_iter().unzip();
                SparseParamRow { indices, values }
            }
        }
    }
}

impl QuadraticForm for Precision {
    /// `x^T (J + Lambda)^-1 x`
    fn quad_dense(&self, x: &[f64]) -> f64 {
        match self {
            Precision::Diagonal(inv) => x.iter().zip(inv).map(|(a, b)| a * a * b).sum(),
            _ => linalg::dot(x, &self.solve(x)),
        }
    }

    fn quad_sparse(&self, x: &SparseParamRow) -> f64 {
        let y = self.solve_sparse(x);
        // y's support contains x's support
        let mut acc = 0.0;
        let mut q = 0;
        for (k, v) in x.iter() {
            while y.indices[q] < k {
                q += 1;
            }
            acc += v * y.values[q];
        }
        acc
    }
}

/// Information filter over one parameter vector: decays and accumulates the
/// inverse covariance, then returns the preconditioned step.
#[derive(Debug, Clone)]
pub struct InformationFilter {
    pub information: InverseCovariance,
    /// Diagonal of the prior inverse covariance `Lambda`.
    pub prior: Vec<f64>,
}

impl InformationFilter {
    pub fn new(information: InverseCovariance, prior: Vec<f64>) -> Result<Self> {
        check_len("prior", information.dim(), prior.len())?;
        if let Some(p) = prior.iter().find(|p| !(**p > 0.0)) {
            return Err(Error::Config(format!("prior precision must be positive, got {p}")));
        }
        Ok(Self { information, prior })
    }

    /// `J <- (1 - gamma) J + reduce(g g^T)`; returns `((J + Lambda)^-1 g, factored J + Lambda)`.
    pub fn update(&mut self, g: &[f64], gamma: f64) -> Result<(Vec<f64>, Precision)> {
        check_len("gradient", self.information.dim(), g.len())?;
        self.information.decay(1.0 - gamma);
        self.information.add_outer(g);
        let precision = self.information.factor(&self.prior)?;
        let step = precision.solve(g);
        Ok((step, precision))
    }

    pub fn precision(&self) -> Result<Precision> {
        self.information.factor(&self.prior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<BlockLayout> {
        Arc::new(BlockLayout::new(5, vec![vec![0, 3], vec![1, 2, 4]]).unwrap())
    }

    #[test]
    fn layout_must_partition() {
        assert!(BlockLayout::new(3, vec![vec![0, 1]]).is_err());
        assert!(BlockLayout::new(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        let rows = vec![SparseParamRow::new(vec![0, 2], vec![1.0, 1.0])];
        let l = BlockLayout::from_row_supports(4, &rows).unwrap();
        assert_eq!(l.blocks(), &[vec![0, 2], vec![1], vec![3]]);
    }

    #[test]
    fn identity_prior_with_empty_information_is_plain_gradient() {
        let g = vec![0.5, -1.0, 2.0, 0.0, 3.0];
        for j in [InverseCovariance::zeros_diagonal(5), InverseCovariance::zeros_blocks(layout())] {
            let p = j.factor(&[1.0; 5]).unwrap();
            assert_eq!(p.solve(&g), g);
        }
    }

    #[test]
    fn block_outer_is_dense_outer_on_block() {
        let g = vec![1.0, 2.0, -1.0, 0.5, 3.0];
        let mut j = InverseCovariance::zeros_blocks(layout());
        j.add_outer(&g);
        let dense = j.to_dense();
        let full = Matrix::outer(&g, &g);
        for a in 0..5 {
            for b in 0..5 {
                let same = layout().owner[a].0 == layout().owner[b].0;
                let expect = if same { full[(a, b)] } else { 0.0 };
                assert_eq!(dense[(a, b)], expect);
            }
        }
        let mut d = InverseCovariance::zeros_diagonal(5);
        d.add_outer(&g);
        assert_eq!(d, InverseCovariance::Diagonal(g.iter().map(|x| x * x).collect()));
    }

    #[test]
    fn block_solve_matches_dense_inverse() {
        let mut j = InverseCovariance::zeros_blocks(layout());
        j.add_outer(&[1.0, 2.0, -1.0, 0.5, 3.0]);
        j.add_outer(&[0.3, -0.2, 0.7, 1.5, -0.4]);
        let prior = vec![0.5; 5];
        let p = j.factor(&prior).unwrap();
        let g = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let x = p.solve(&g);
        let mut dense = j.to_dense();
        for i in 0..5 {
            dense[(i, i)] += prior[i];
        }
        let back = dense.mul_vec(&x);
        for (a, b) in back.iter().zip(&g) {
            assert!((a - b).abs() < 1e-12);
        }
        let w = SparseParamRow::new(vec![2, 3], vec![1.0, -2.0]);
        let sparse = p.solve_sparse(&w);
        let dense_sol = p.solve(&w.to_dense(5));
        assert_eq!(sparse.indices, vec![0, 1, 2, 3, 4]);
        for (k, v) in sparse.iter() {
            assert!((v - dense_sol[k]).abs() < 1e-14);
        }
        assert!((p.quad_sparse(&w) - p.quad_dense(&w.to_dense(5))).abs() < 1e-14);
    }

    #[test]
    fn zero_decay_gives_one_over_t_steps() {
        // stationary gradients, gamma = 0: J grows linearly and steps shrink like 1/t
        let g = vec![1.0, -0.5, 2.0];
        let mut f = InformationFilter::new(InverseCovariance::zeros_diagonal(3), vec![1.0; 3]).unwrap();
        let mut norms = Vec::new();
        for _ in 0..1000 {
            let (step, _) = f.update(&g, 0.0).unwrap();
            norms.push(linalg::norm(&step));
        }
        let ratio = norms[99] / norms[999];
        assert!(ratio > 10.0 / 1.5 && ratio < 10.0 * 1.5, "ratio {ratio}");
    }

    #[test]
    fn decay_and_add_stay_positive_definite() {
        let mut j = InverseCovariance::zeros_blocks(layout());
        for t in 1..200 {
            j.decay(1.0 - 1.0 / (t as f64).sqrt().max(1.01));
            j.add_outer(&[t as f64 % 3.0 - 1.0, 0.5, -0.25 * t as f64, 1.0, 0.0]);
            j.factor(&[1e-3; 5]).unwrap();
        }
    }

    #[test]
    fn nonpositive_prior_rejected() {
        assert!(InformationFilter::new(InverseCovariance::zeros_diagonal(2), vec![1.0, 0.0]).is_err());
    }
}
