//! Self-checks run by the `check` command: finite differences, exhaustive
//! sign enumeration and variance identities on small instances.

use std::fmt;

use rand::Rng;

use crate::dynsys::{Activation, DynamicalSystem, Rnn, SparseParamRow};
use crate::error::Result;
use crate::estimators::{
    sequence_gradient, sequence_loss, window_gradient, FullJacobian, Model, NbtState, ScalingRule,
};
use crate::estimators::rtrl::rtrl_step;
use crate::linalg::{self, Matrix};
use crate::rankone::{self, NormPair, RankOneDecomposition};
use crate::readout::Readout;
use crate::rng::{self, MaskSigns};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Test hook: perturbs one entry of `df/dh` so the Jacobian check must fail.
    pub corrupt_jacobian: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub observed: f64,
    pub limit: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.observed < self.limit
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} observed={:.3e} limit={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.limit
        )
    }
}

/// Delegates to an [`Rnn`] but reports a wrong `df/dh`.
struct Corrupted(Rnn);

impl DynamicalSystem for Corrupted {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }
    fn step(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.0.step(h, x, theta)
    }
    fn jacobian_state(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Matrix> {
        let mut j = self.0.jacobian_state(h, x, theta)?;
        j.as_mut_slice()[0] += 1e-3;
        Ok(j)
    }
    fn jvp_state(&self, h: &[f64], x: &[f64], theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.0.jvp_state(h, x, theta, v)
    }
    fn vjp_state(&self, h: &[f64], x: &[f64], theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.0.vjp_state(h, x, theta, u)
    }
    fn param_rows(&self, h: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<SparseParamRow>> {
        self.0.param_rows(h, x, theta)
    }
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    diff / linalg::max_abs(b).max(1e-12)
}

fn uniform_vec<R: Rng>(r: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

fn random_model(seed: u64, units: usize, symbols: usize) -> Model<Rnn> {
    let mut r = rng::stream(seed, rng::STREAM_INIT);
    let rnn = Rnn::leaky_random(units, symbols, Activation::Tanh, &mut r).expect("valid size");
    let theta = rnn.init_params(&mut r).to_flat();
    let readout = Readout::new(units, symbols, Activation::Tanh);
    let phi = uniform_vec(&mut r, readout.param_dim(), 0.5);
    Model::new(rnn, readout, theta, phi).expect("consistent dims")
}

fn fd_jacobian_state(sys: &dyn DynamicalSystem, h: &[f64], x: &[f64], theta: &[f64], eps: f64) -> Result<Matrix> {
    let n = sys.state_dim();
    let mut m = Matrix::zeros(n, n);
    for k in 0..n {
        let mut hp = h.to_vec();
        let mut hm = h.to_vec();
        hp[k] += eps;
        hm[k] -= eps;
        let (fp, fm) = (sys.step(&hp, x, theta)?, sys.step(&hm, x, theta)?);
        for i in 0..n {
            m.as_mut_slice()[i * n + k] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
    Ok(m)
}

fn check_jacobian_state(opts: &CheckOptions) -> Result<CheckResult> {
    let model = random_model(opts.seed, 4, 3);
    let mut r = rng::stream(opts.seed, 2);
    let h = uniform_vec(&mut r, 4, 1.0);
    let x = [0.0, 1.0, 0.0];
    let sys: Box<dyn DynamicalSystem> = if opts.corrupt_jacobian {
        Box::new(Corrupted(model.system.clone()))
    } else {
        Box::new(model.system.clone())
    };
    let exact = sys.jacobian_state(&h, &x, &model.theta)?;
    let fd = fd_jacobian_state(sys.as_ref(), &h, &x, &model.theta, 1e-6)?;
    Ok(CheckResult {
        name: "jacobian_state",
        observed: relative_error(exact.as_slice(), fd.as_slice()),
        limit: 1e-6,
    })
}

fn check_param_rows(opts: &CheckOptions) -> Result<CheckResult> {
    let model = random_model(opts.seed, 4, 3);
    let sys = &model.system;
    let mut r = rng::stream(opts.seed, 3);
    let h = uniform_vec(&mut r, 4, 1.0);
    let x = [1.0, 0.0, 0.0];
    let rows = sys.param_rows(&h, &x, &model.theta)?;
    let (n, p) = (sys.state_dim(), sys.param_dim());
    let mut exact = Matrix::zeros(n, p);
    for (i, row) in rows.iter().enumerate() {
        exact.row_mut(i).copy_from_slice(&row.to_dense(p));
    }
    let mut fd = Matrix::zeros(n, p);
    let eps = 1e-6;
    for k in 0..p {
        let mut tp = model.theta.clone();
        let mut tm = model.theta.clone();
        tp[k] += eps;
        tm[k] -= eps;
        let (fp, fm) = (sys.step(&h, &x, &tp)?, sys.step(&h, &x, &tm)?);
        for i in 0..n {
            fd.as_mut_slice()[i * p + k] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
    Ok(CheckResult {
        name: "param_rows",
        observed: relative_error(exact.as_slice(), fd.as_slice()),
        limit: 1e-6,
    })
}

fn check_readout(opts: &CheckOptions) -> Result<CheckResult> {
    let model = random_model(opts.seed, 4, 3);
    let ro = &model.readout;
    let mut r = rng::stream(opts.seed, 4);
    let h = uniform_vec(&mut r, 4, 1.0);
    let y = 2;
    let loss = |h: &[f64], phi: &[f64]| -> Result<f64> { Ok(ro.predict(h, phi)?.loss_bits(y)) };
    let pred = ro.predict(&h, &model.phi)?;
    let lg = ro.loss_and_grads(&pred, y, &h, &model.phi)?;
    let eps = 1e-6;
    let mut exact = lg.grad_phi.clone();
    exact.extend_from_slice(&lg.grad_h);
    let mut fd = Vec::with_capacity(exact.len());
    for k in 0..model.phi.len() {
        let mut pp = model.phi.clone();
        let mut pm = model.phi.clone();
        pp[k] += eps;
        pm[k] -= eps;
        fd.push((loss(&h, &pp)? - loss(&h, &pm)?) / (2.0 * eps));
    }
    for k in 0..h.len() {
        let mut hp = h.clone();
        let mut hm = h.clone();
        hp[k] += eps;
        hm[k] -= eps;
        fd.push((loss(&hp, &model.phi)? - loss(&hm, &model.phi)?) / (2.0 * eps));
    }
    Ok(CheckResult {
        name: "readout_gradient",
        observed: relative_error(&exact, &fd),
        limit: 1e-6,
    })
}

fn random_symbols(seed: u64, len: usize, n_symbols: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, 5);
    (0..len).map(|_| r.random_range(0..n_symbols)).collect()
}

fn check_rtrl_gradient(opts: &CheckOptions) -> Result<CheckResult> {
    let model = random_model(opts.seed, 5, 3);
    let symbols = random_symbols(opts.seed, 10, 3);
    let (_, exact, _) = sequence_gradient(&model, &symbols)?;
    let eps = 1e-5;
    let mut fd = Vec::with_capacity(exact.len());
    for k in 0..model.theta.len() {
        let mut mp = model.clone();
        let mut mm = model.clone();
        mp.theta[k] += eps;
        mm.theta[k] -= eps;
        fd.push((sequence_loss(&mp, &symbols)? - sequence_loss(&mm, &symbols)?) / (2.0 * eps));
    }
    Ok(CheckResult {
        name: "rtrl_gradient",
        observed: relative_error(&exact, &fd),
        limit: 1e-5,
    })
}

fn check_tbptt_full_window(opts: &CheckOptions) -> Result<CheckResult> {
    let model = random_model(opts.seed, 5, 3);
    let symbols = random_symbols(opts.seed, 11, 3);
    let wg = window_gradient(&model, &model.h, &symbols[..10], &symbols[1..])?;
    // RTRL also scores symbols[0] from h = 0, which only moves phi
    let (_, mut theta_ref, mut phi_ref) = sequence_gradient(&model, &symbols)?;
    linalg::axpy(-1.0, &model.observe(symbols[0])?.grad_phi, &mut phi_ref);
    theta_ref.extend_from_slice(&phi_ref);
    let mut exact = wg.grad_theta;
    exact.extend_from_slice(&wg.grad_phi);
    Ok(CheckResult {
        name: "tbptt_full_window",
        observed: relative_error(&exact, &theta_ref),
        limit: 1e-8,
    })
}

fn random_decomposition<R: Rng>(r: &mut R, terms: usize, rows: usize, cols: usize) -> RankOneDecomposition {
    let pairs = (0..terms)
        .map(|_| (uniform_vec(r, rows, 1.0), uniform_vec(r, cols, 1.0)))
        .collect();
    RankOneDecomposition::from_dense_terms(rows, cols, pairs).expect("consistent dims")
}

fn signs_of(mask: u64, len: usize) -> Vec<f64> {
    (0..len).map(|k| if (mask >> k) & 1 == 1 { 1.0 } else { -1.0 }).collect()
}

fn check_rankone_unbiased(opts: &CheckOptions) -> Result<CheckResult> {
    let mut r = rng::stream(opts.seed, 6);
    let mut worst: f64 = 0.0;
    for terms in 1..=12 {
        let d = random_decomposition(&mut r, terms, 3, 4);
        let rho = rankone::optimal_scalings(&d, NormPair::euclidean());
        let mut mean = Matrix::zeros(3, 4);
        let count = 1u64 << terms;
        for mask in 0..count {
            let est = rankone::reduce_with_scalings(&d, &rho, &signs_of(mask, terms))?;
            linalg::axpy(1.0 / count as f64, est.to_matrix().as_slice(), mean.as_mut_slice());
        }
        worst = worst.max(mean.max_abs_diff(&d.to_matrix()));
    }
    Ok(CheckResult {
        name: "rankone_unbiased",
        observed: worst,
        limit: 1e-12,
    })
}

fn check_rankone_variance(opts: &CheckOptions) -> Result<CheckResult> {
    let mut r = rng::stream(opts.seed, 7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let terms = r.random_range(3..=6);
        let (rows, cols) = (r.random_range(1..=8), r.random_range(1..=8));
        let d = random_decomposition(&mut r, terms, rows, cols);
        let a = d.to_matrix();
        let rho = rankone::optimal_scalings(&d, NormPair::euclidean());
        let ones = vec![1.0; terms];
        for (scalings, scaled) in [(&rho, true), (&ones, false)] {
            let count = 1u64 << terms;
            let mut var = 0.0;
            for mask in 0..count {
                let est = rankone::reduce_with_scalings(&d, scalings, &signs_of(mask, terms))?;
                let m = est.to_matrix();
                let diff: f64 = m.as_slice().iter().zip(a.as_slice()).map(|(x, y)| (x - y).powi(2)).sum();
                var += diff / count as f64;
            }
            let formula = rankone::variance_hs(&d, scaled);
            worst = worst.max((var - formula).abs() / formula.abs().max(1.0));
        }
    }
    Ok(CheckResult {
        name: "rankone_variance",
        observed: worst,
        limit: 1e-10,
    })
}

fn check_nbt_unbiased(opts: &CheckOptions) -> Result<CheckResult> {
    let mut r = rng::stream(opts.seed, 8);
    let rnn = Rnn::leaky_random(2, 2, Activation::Tanh, &mut r)?;
    let theta = uniform_vec(&mut r, rnn.param_dim(), 1.0);
    let inputs = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];

    let mut g = FullJacobian::zeros(2, rnn.param_dim());
    let mut h = vec![0.0; 2];
    for x in &inputs {
        g = rtrl_step(&rnn, &g, &h, x, &theta)?;
        h = rnn.step(&h, x, &theta)?;
    }
    let mut worst: f64 = 0.0;
    for rule in [ScalingRule::Euclidean, ScalingRule::Unit] {
        let mut mean = Matrix::zeros(2, rnn.param_dim());
        let count = 64u64;
        for mask in 0..count {
            let mut signs = MaskSigns::new(mask);
            let mut s = NbtState::new(2, rnn.param_dim(), 1);
            let mut h = vec![0.0; 2];
            for x in &inputs {
                let sc = s.scalings(rule, None);
                s.reduce(&sc, &mut signs);
                h = s.transition(&rnn, &h, x, &theta)?;
            }
            linalg::axpy(1.0 / count as f64, s.estimate().as_slice(), mean.as_mut_slice());
        }
        worst = worst.max(mean.max_abs_diff(&g.g));
    }
    Ok(CheckResult {
        name: "nbt_unbiased",
        observed: worst,
        limit: 1e-12,
    })
}

/// Runs every check; the command succeeds iff all of them pass.
pub fn run_checks(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let checks: [fn(&CheckOptions) -> Result<CheckResult>; 8] = [
        check_jacobian_state,
        check_param_rows,
        check_readout,
        check_rtrl_gradient,
        check_tbptt_full_window,
        check_rankone_unbiased,
        check_rankone_variance,
        check_nbt_unbiased,
    ];
    checks.iter().map(|c| c(opts)).collect()
}
