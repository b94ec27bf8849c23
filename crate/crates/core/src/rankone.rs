//! Expectation-preserving rank-one reduction of a sum of outer products.
//!
//! Given `A = sum_i v_i w_i^T` and independent uniform signs `eps_i`,
//! `(sum_i eps_i rho_i v_i)(sum_j eps_j w_j / rho_j)^T` has expectation `A`
//! for any nonzero `rho_i`. Choosing `rho_i = sqrt(|w_i| / |v_i|)` balances the
//! two factors of each term and minimizes the Hilbert-Schmidt variance.

use crate::dynsys::SparseParamRow;
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::SignSource;

/// Regularizer added to both norms before taking their ratio.
pub const SCALING_EPS: f64 = 1e-12;

/// `sqrt((|w| + eps) / (|v| + eps))`: equalizes `|rho v|` and `|w / rho|`.
#[inline]
pub fn balanced_scaling(norm_v: f64, norm_w: f64) -> f64 {
    ((norm_w + SCALING_EPS) / (norm_v + SCALING_EPS)).sqrt()
}

/// Right factor of a term, dense or sparse.
#[derive(Debug, Clone, PartialEq)]
pub enum TermVector {
    Dense(Vec<f64>),
    Sparse(SparseParamRow),
}

impl TermVector {
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        match self {
            TermVector::Dense(d) => d.clone(),
            TermVector::Sparse(s) => s.to_dense(dim),
        }
    }

    fn axpy_into(&self, alpha: f64, out: &mut [f64]) {
        match self {
            TermVector::Dense(d) => linalg::axpy(alpha, d, out),
            TermVector::Sparse(s) => s.axpy_into(alpha, out),
        }
    }

    /// Euclidean inner product.
    pub fn dot(&self, other: &TermVector) -> f64 {
        match (self, other) {
            (TermVector::Dense(a), TermVector::Dense(b)) => linalg::dot(a, b),
            (TermVector::Sparse(s), TermVector::Dense(d))
            | (TermVector::Dense(d), TermVector::Sparse(s)) => s.dot_dense(d),
            (TermVector::Sparse(a), TermVector::Sparse(b)) => {
                let (mut p, mut q, mut acc) = (0, 0, 0.0);
                while p < a.nnz() && q < b.nnz() {
                    match a.indices[p].cmp(&b.indices[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            acc += a.values[p] * b.values[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
                acc
            }
        }
    }
}

/// A positive definite quadratic form used to measure the factors of a term.
pub trait QuadraticForm {
    fn quad_dense(&self, x: &[f64]) -> f64;
    fn quad_sparse(&self, x: &SparseParamRow) -> f64;

    fn quad(&self, x: &TermVector) -> f64 {
        match x {
            TermVector::Dense(d) => self.quad_dense(d),
            TermVector::Sparse(s) => self.quad_sparse(s),
        }
    }

    fn norm(&self, x: &TermVector) -> f64 {
        self.quad(x).max(0.0).sqrt()
    }
}

/// The standard inner product.
#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl QuadraticForm for Euclidean {
    fn quad_dense(&self, x: &[f64]) -> f64 {
        linalg::norm_sq(x)
    }

    fn quad_sparse(&self, x: &SparseParamRow) -> f64 {
        x.norm_sq()
    }
}

/// `x^T diag(d) x`
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalForm(pub Vec<f64>);

impl QuadraticForm for DiagonalForm {
    fn quad_dense(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.0).map(|(xi, di)| di * xi * xi).sum()
    }

    fn quad_sparse(&self, x: &SparseParamRow) -> f64 {
        x.iter().map(|(k, v)| self.0[k] * v * v).sum()
    }
}

/// Norms for the left (state-side) and right (parameter-side) factors.
#[derive(Clone, Copy)]
pub struct NormPair<'a> {
    pub v: &'a dyn QuadraticForm,
    pub w: &'a dyn QuadraticForm,
}

impl NormPair<'static> {
    pub fn euclidean() -> Self {
        NormPair {
            v: &Euclidean,
            w: &Euclidean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub v: Vec<f64>,
    pub w: TermVector,
}

/// `A = sum_i v_i w_i^T` with every `v_i` of length `rows` and `w_i` of length `cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneDecomposition {
    rows: usize,
    cols: usize,
    terms: Vec<Term>,
}

impl RankOneDecomposition {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            terms: Vec::new(),
        }
    }

    pub fn push_dense(&mut self, v: Vec<f64>, w: Vec<f64>) -> Result<()> {
        check_len("term left factor", self.rows, v.len())?;
        check_len("term right factor", self.cols, w.len())?;
        self.terms.push(Term {
            v,
            w: TermVector::Dense(w),
        });
        Ok(())
    }

    pub fn push_sparse(&mut self, v: Vec<f64>, w: SparseParamRow) -> Result<()> {
        check_len("term left factor", self.rows, v.len())?;
        if let Some(&k) = w.indices.last() {
            if k >= self.cols {
                return Err(Error::Dimension {
                    context: "sparse term index",
                    expected: self.cols,
                    actual: k + 1,
                });
            }
        }
        self.terms.push(Term {
            v,
            w: TermVector::Sparse(w),
        });
        Ok(())
    }

    pub fn from_dense_terms(rows: usize, cols: usize, terms: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let mut d = Self::new(rows, cols);
        for (v, w) in terms {
            d.push_dense(v, w)?;
        }
        Ok(d)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// The represented matrix `sum_i v_i w_i^T`.
    pub fn to_matrix(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for t in &self.terms {
            let w = t.w.to_dense(self.cols);
            for (i, &vi) in t.v.iter().enumerate() {
                linalg::axpy(vi, &w, out.row_mut(i));
            }
        }
        out
    }
}

/// The rank-one matrix `v w^T`, kept factored.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneEstimate {
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl RankOneEstimate {
    pub fn to_matrix(&self) -> Matrix {
        Matrix::outer(&self.v, &self.w)
    }

    /// `(1/K) sum_k v_k w_k^T`
    pub fn average(estimates: &[RankOneEstimate]) -> Matrix {
        assert!(!estimates.is_empty(), "average of no estimates");
        let mut out = estimates[0].to_matrix();
        for e in &estimates[1..] {
            let m = e.to_matrix();
            linalg::axpy(1.0, m.as_slice(), out.as_mut_slice());
        }
        linalg::scale(1.0 / estimates.len() as f64, out.as_mut_slice());
        out
    }
}

/// Variance-optimal `rho_i = sqrt(|w_i| / |v_i|)` under the supplied norms.
pub fn optimal_scalings(d: &RankOneDecomposition, norms: NormPair<'_>) -> Vec<f64> {
    d.terms
        .iter()
        .map(|t| balanced_scaling(norms.v.quad_dense(&t.v).max(0.0).sqrt(), norms.w.norm(&t.w)))
        .collect()
}

/// `(sum_i eps_i rho_i v_i, sum_i eps_i w_i / rho_i)` for explicit scalings.
pub fn reduce_with_scalings(
    d: &RankOneDecomposition,
    scalings: &[f64],
    signs: &[f64],
) -> Result<RankOneEstimate> {
    check_len("sign vector", d.len(), signs.len())?;
    check_len("scaling vector", d.len(), scalings.len())?;
    let mut v = vec![0.0; d.rows];
    let mut w = vec![0.0; d.cols];
    for ((t, &rho), &eps) in d.terms.iter().zip(scalings).zip(signs) {
        linalg::axpy(eps * rho, &t.v, &mut v);
        t.w.axpy_into(eps / rho, &mut w);
    }
    Ok(RankOneEstimate { v, w })
}

/// Rank-one reduction with variance-optimal scalings and the given signs.
pub fn reduce(d: &RankOneDecomposition, norms: NormPair<'_>, signs: &[f64]) -> Result<RankOneEstimate> {
    let rho = optimal_scalings(d, norms);
    reduce_with_scalings(d, &rho, signs)
}

/// `K` independent reductions; their average is an unbiased estimate of `A`.
pub fn reduce_rank_k(
    d: &RankOneDecomposition,
    norms: NormPair<'_>,
    k: usize,
    signs: &mut dyn SignSource,
) -> Result<Vec<RankOneEstimate>> {
    if k == 0 {
        return Err(Error::Config("rank K must be at least 1".into()));
    }
    let rho = optimal_scalings(d, norms);
    let mut eps = vec![0.0; d.len()];
    (0..k)
        .map(|_| {
            signs.fill_signs(&mut eps);
            reduce_with_scalings(d, &rho, &eps)
        })
        .collect()
}

/// Hilbert-Schmidt variance `E|A~|^2 - |A|^2` of the reduction under Euclidean
/// norms, either with the raw terms or after variance-optimal scaling.
pub fn variance_hs(d: &RankOneDecomposition, scaled: bool) -> f64 {
    let k = d.len();
    let nv: Vec<f64> = d.terms.iter().map(|t| linalg::norm_sq(&t.v)).collect();
    let nw: Vec<f64> = d.terms.iter().map(|t| Euclidean.quad(&t.w)).collect();
    let mut cross = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                cross += linalg::dot(&d.terms[i].v, &d.terms[j].v) * d.terms[i].w.dot(&d.terms[j].w);
            }
        }
    }
    if scaled {
        let mut var = cross;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    var += (nv[i] * nv[j] * nw[i] * nw[j]).sqrt();
                }
            }
        }
        var
    } else {
        let sv: f64 = nv.iter().sum();
        let sw: f64 = nw.iter().sum();
        let diag: f64 = nv.iter().zip(&nw).map(|(a, b)| a * b).sum();
        sv * sw - diag + cross
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, MaskSigns, RandomSigns};
    use rand::Rng;

    fn random_decomposition(rng: &mut impl Rng, k: usize, rows: usize, cols: usize) -> RankOneDecomposition {
        let terms = (0..k)
            .map(|_| {
                (
                    (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        RankOneDecomposition::from_dense_terms(rows, cols, terms).unwrap()
    }

    fn sign_vector(mask: u64, k: usize) -> Vec<f64> {
        let mut s = vec![0.0; k];
        MaskSigns::new(mask).fill_signs(&mut s);
        s
    }

    #[test]
    fn scaling_of_unbalanced_term() {
        let mut d = RankOneDecomposition::new(2, 3);
        d.push_dense(vec![2.0, 0.0], vec![0.0, 0.0, 1.0]).unwrap();
        let rho = optimal_scalings(&d, NormPair::euclidean());
        assert!((rho[0] - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn equal_norms_give_unit_scaling() {
        let mut d = RankOneDecomposition::new(2, 2);
        d.push_dense(vec![3.0, 4.0], vec![0.0, 5.0]).unwrap();
        assert!((optimal_scalings(&d, NormPair::euclidean())[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_term_stays_finite() {
        let mut d = RankOneDecomposition::new(2, 2);
        d.push_dense(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        d.push_dense(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        d.push_dense(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let rho = optimal_scalings(&d, NormPair::euclidean());
        assert!(rho.iter().all(|r| r.is_finite() && *r > 0.0));
        assert_eq!(rho[2], 1.0);
        let est = reduce(&d, NormPair::euclidean(), &[1.0, -1.0, 1.0]).unwrap();
        assert!(est.v.iter().chain(&est.w).all(|x| x.is_finite()));
    }

    #[test]
    fn single_term_is_exact() {
        let mut d = RankOneDecomposition::new(2, 3);
        d.push_dense(vec![1.5, -2.0], vec![0.5, 0.0, 3.0]).unwrap();
        for s in [1.0, -1.0] {
            let est = reduce(&d, NormPair::euclidean(), &[s]).unwrap();
            assert!(est.to_matrix().max_abs_diff(&d.to_matrix()) < 1e-12);
        }
        assert!(variance_hs(&d, true).abs() < 1e-12);
        assert!(variance_hs(&d, false).abs() < 1e-12);
    }

    #[test]
    fn identity_by_enumeration() {
        let d = RankOneDecomposition::from_dense_terms(
            2,
            2,
            vec![(vec![1.0, 0.0], vec![1.0, 0.0]), (vec![0.0, 1.0], vec![0.0, 1.0])],
        )
        .unwrap();
        let mut mean = Matrix::zeros(2, 2);
        for mask in 0..4 {
            let est = reduce(&d, NormPair::euclidean(), &sign_vector(mask, 2)).unwrap();
            let m = est.to_matrix();
            // every sign pattern misses A by exactly HS^2 = 2
            assert!((m.max_abs_diff(&Matrix::identity(2)) - 1.0).abs() < 1e-12);
            linalg::axpy(0.25, m.as_slice(), mean.as_mut_slice());
        }
        assert!(mean.max_abs_diff(&Matrix::identity(2)) < 1e-15);
        assert!((variance_hs(&d, true) - 2.0).abs() < 1e-12);
        assert!((variance_hs(&d, false) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_sparse_and_dense_terms_enumerate_to_expectation() {
        let mut d = RankOneDecomposition::new(3, 6);
        d.push_dense(vec![0.2, -1.0, 0.4], vec![1.0, 0.0, -0.5, 0.3, 0.0, 2.0]).unwrap();
        d.push_sparse(vec![1.0, 0.0, 0.0], SparseParamRow::new(vec![0, 4], vec![0.7, -1.1])).unwrap();
        d.push_sparse(vec![0.0, 0.0, 1.0], SparseParamRow::new(vec![2, 4, 5], vec![1.0, 0.5, 0.25])).unwrap();
        let target = d.to_matrix();
        let mut mean = Matrix::zeros(3, 6);
        let mut second = 0.0;
        for mask in 0..8 {
            let m = reduce(&d, NormPair::euclidean(), &sign_vector(mask, 3)).unwrap().to_matrix();
            second += m.frobenius_sq() / 8.0;
            linalg::axpy(1.0 / 8.0, m.as_slice(), mean.as_mut_slice());
        }
        assert!(mean.max_abs_diff(&target) < 1e-12);
        let var = second - target.frobenius_sq();
        assert!((var - variance_hs(&d, true)).abs() < 1e-10);
    }

    #[test]
    fn sign_length_mismatch() {
        let d = RankOneDecomposition::from_dense_terms(1, 1, vec![(vec![1.0], vec![1.0])]).unwrap();
        assert!(reduce(&d, NormPair::euclidean(), &[1.0, 1.0]).is_err());
    }

    #[test]
    fn rank_k_rejects_zero_and_matches_single_reduce() {
        let mut r = rng::stream(3, 0);
        let d = random_decomposition(&mut r, 3, 2, 4);
        let mut signs = RandomSigns::new(11, 0);
        assert!(reduce_rank_k(&d, NormPair::euclidean(), 0, &mut signs).is_err());

        let mut a = RandomSigns::new(11, 0);
        let one = reduce_rank_k(&d, NormPair::euclidean(), 1, &mut a).unwrap();
        let mut b = RandomSigns::new(11, 0);
        let mut eps = vec![0.0; 3];
        b.fill_signs(&mut eps);
        assert_eq!(one[0], reduce(&d, NormPair::euclidean(), &eps).unwrap());
    }

    #[test]
    fn rank_k_over_all_sign_vectors_is_exact() {
        let mut r = rng::stream(4, 0);
        let d = random_decomposition(&mut r, 3, 3, 2);
        // K = 2^3 with MaskSigns walking through all patterns consecutively
        let mut mask = 0u64;
        for p in 0..8u64 {
            mask |= p << (3 * p);
        }
        let mut signs = MaskSigns::new(mask);
        let est = reduce_rank_k(&d, NormPair::euclidean(), 8, &mut signs).unwrap();
        assert!(RankOneEstimate::average(&est).max_abs_diff(&d.to_matrix()) < 1e-12);
    }

    #[test]
    fn rank_k_variance_shrinks_like_one_over_k() {
        let mut r = rng::stream(5, 0);
        let d = random_decomposition(&mut r, 4, 3, 3);
        let a = d.to_matrix();
        let var1 = variance_hs(&d, true);
        let k = 4;
        let draws = 20_000;
        let mut signs = RandomSigns::new(21, 0);
        let mut samples = Vec::with_capacity(draws);
        for _ in 0..draws {
            let est = reduce_rank_k(&d, NormPair::euclidean(), k, &mut signs).unwrap();
            let mut m = RankOneEstimate::average(&est);
            linalg::axpy(-1.0, a.as_slice(), m.as_mut_slice());
            samples.push(m.frobenius_sq());
        }
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        let se = sd / (draws as f64).sqrt();
        let expected = var1 / k as f64;
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn diagonal_norm_balances_factors() {
        let mut r = rng::stream(6, 0);
        let d = random_decomposition(&mut r, 5, 4, 6);
        let dv = DiagonalForm((0..4).map(|i| 0.5 + i as f64).collect());
        let dw = DiagonalForm((0..6).map(|i| 2.0 / (1.0 + i as f64)).collect());
        let norms = NormPair { v: &dv, w: &dw };
        let rho = optimal_scalings(&d, norms);
        for (t, r) in d.terms().iter().zip(&rho) {
            let sv: Vec<f64> = t.v.iter().map(|x| x * r).collect();
            let sw: Vec<f64> = t.w.to_dense(6).iter().map(|x| x / r).collect();
            let (a, b) = (dv.quad_dense(&sv).sqrt(), dw.quad_dense(&sw).sqrt());
            assert!((a - b).abs() / a < 1e-12);
        }
    }
}
