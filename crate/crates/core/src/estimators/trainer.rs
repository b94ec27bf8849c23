//! Online training loop shared by RTRL and NoBackTrack.
//!
//! Every tick runs, in order: observation (predict the incoming symbol and
//! score it), update (`phi` from its exact gradient, `theta` along
//! `(H G~)^T`), reduction (no-op for exact RTRL), and transition (read the
//! symbol as the next input and advance the state and the sensitivity).

use crate::dynsys::DynamicalSystem;
use crate::error::{check_len, Error, Result};
use crate::estimators::kalman::{BlockLayout, CovarianceStructure, InformationFilter, InverseCovariance, Precision};
use crate::estimators::nbt::{NbtState, ScalingRule};
use crate::estimators::rtrl::{rtrl_step, FullJacobian};
use crate::estimators::schedule::{Decay, LearningRate};
use crate::linalg;
use crate::readout::{LossGrads, Readout};
use crate::rng::{RandomSigns, SignSource};

/// Any state, parameter or estimator entry beyond this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// A dynamical system with its readout, parameters and current state.
#[derive(Debug, Clone)]
pub struct Model<S> {
    pub system: S,
    pub readout: Readout,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub h: Vec<f64>,
}

impl<S: DynamicalSystem> Model<S> {
    /// Starts from `h = 0`.
    pub fn new(system: S, readout: Readout, theta: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        check_len("theta", system.param_dim(), theta.len())?;
        check_len("phi", readout.param_dim(), phi.len())?;
        check_len("readout units", system.state_dim(), readout.n_units())?;
        let input_dim = system.input_dim();
        if input_dim != 0 && input_dim != readout.n_symbols() {
            return Err(Error::Dimension {
                context: "one-hot input",
                expected: readout.n_symbols(),
                actual: input_dim,
            });
        }
        let h = vec![0.0; system.state_dim()];
        Ok(Self {
            system,
            readout,
            theta,
            phi,
            h,
        })
    }

    /// One-hot encoding of `y` as the next input (empty for input-free systems).
    pub fn encode(&self, y: usize) -> Result<Vec<f64>> {
        let dim = self.system.input_dim();
        if dim == 0 {
            return Ok(Vec::new());
        }
        if y >= dim {
            return Err(Error::UnknownSymbol { symbol: y, size: dim });
        }
        let mut x = vec![0.0; dim];
        x[y] = 1.0;
        Ok(x)
    }

    /// Loss of predicting `y` from the current state, with its gradients.
    pub fn observe(&self, y: usize) -> Result<LossGrads> {
        let pred = self.readout.predict(&self.h, &self.phi)?;
        self.readout.loss_and_grads(&pred, y, &self.h, &self.phi)
    }

    pub fn check_finite(&self, step: u64) -> Result<()> {
        guard(step, "state", &self.h)?;
        guard(step, "theta", &self.theta)?;
        guard(step, "phi", &self.phi)
    }

    /// Block layout grouping the parameters that feed each state unit.
    pub fn unit_blocks(&self) -> Result<BlockLayout> {
        let h = vec![0.0; self.system.state_dim()];
        let x = vec![0.0; self.system.input_dim()];
        let rows = self.system.param_rows(&h, &x, &self.theta)?;
        BlockLayout::from_row_supports(self.system.param_dim(), &rows)
    }
}

pub(crate) fn guard(step: u64, what: &str, values: &[f64]) -> Result<()> {
    let m = linalg::max_abs(values);
    if m > DIVERGENCE_LIMIT {
        Err(Error::Diverged {
            step,
            what: format!("{what} reached magnitude {m:e}"),
        })
    } else {
        Ok(())
    }
}

/// Source of the sensitivity `G~ = dh/dtheta` used in the update.
pub trait Sensitivity {
    /// `(H G~)^T`
    fn direction(&self, grad_h: &[f64]) -> Vec<f64>;

    /// Reduction step; `precision` is the factored `J_theta + Lambda_theta`
    /// when a Kalman rule is active.
    fn reduce(&mut self, precision: Option<&Precision>);

    /// Advances the sensitivity through the transition at `(h, x, theta)` and
    /// returns the next state.
    fn advance<S: DynamicalSystem + ?Sized>(&mut self, sys: &S, h: &[f64], x: &[f64], theta: &[f64])
        -> Result<Vec<f64>>;

    fn max_abs(&self) -> f64;
}

/// Exact RTRL sensitivity.
#[derive(Debug, Clone)]
pub struct ExactSensitivity {
    pub jacobian: FullJacobian,
}

impl ExactSensitivity {
    pub fn new(state_dim: usize, param_dim: usize) -> Self {
        Self {
            jacobian: FullJacobian::zeros(state_dim, param_dim),
        }
    }
}

impl Sensitivity for ExactSensitivity {
    fn direction(&self, grad_h: &[f64]) -> Vec<f64> {
        self.jacobian.loss_gradient(grad_h)
    }

    fn reduce(&mut self, _precision: Option<&Precision>) {}

    fn advance<S: DynamicalSystem + ?Sized>(&mut self, sys: &S, h: &[f64], x: &[f64], theta: &[f64])
        -> Result<Vec<f64>> {
        self.jacobian = rtrl_step(sys, &self.jacobian, h, x, theta)?;
        sys.step(h, x, theta)
    }

    fn max_abs(&self) -> f64 {
        linalg::max_abs(self.jacobian.g.as_slice())
    }
}

/// Rank-`K` NoBackTrack sensitivity.
#[derive(Debug, Clone)]
pub struct NbtSensitivity<R = RandomSigns> {
    pub state: NbtState,
    pub rule: ScalingRule,
    pub signs: R,
}

impl<R: SignSource> NbtSensitivity<R> {
    pub fn new(state_dim: usize, param_dim: usize, rank: usize, rule: ScalingRule, signs: R) -> Self {
        Self {
            state: NbtState::new(state_dim, param_dim, rank),
            rule,
            signs,
        }
    }
}

impl<R: SignSource> Sensitivity for NbtSensitivity<R> {
    fn direction(&self, grad_h: &[f64]) -> Vec<f64> {
        self.state.direction(grad_h)
    }

    fn reduce(&mut self, precision: Option<&Precision>) {
        let scalings = self.state.scalings(self.rule, precision);
        self.state.reduce(&scalings, &mut self.signs);
    }

    fn advance<S: DynamicalSystem + ?Sized>(&mut self, sys: &S, h: &[f64], x: &[f64], theta: &[f64])
        -> Result<Vec<f64>> {
        self.state.transition(sys, h, x, theta)
    }

    fn max_abs(&self) -> f64 {
        self.state.max_abs()
    }
}

/// Parameter update applied once the gradient direction is known.
#[derive(Debug, Clone)]
pub enum UpdateRule {
    /// `theta <- theta - eta_t (H G~)^T`, `phi <- phi - eta_t dl/dphi`.
    Sgd(LearningRate),
    /// Information filter on `theta` and on `phi`.
    Kalman {
        theta: InformationFilter,
        phi: InformationFilter,
        decay: Decay,
    },
}

impl UpdateRule {
    /// Kalman rule with empty information and prior `Lambda = prior_scale * Id`.
    pub fn kalman<S: DynamicalSystem>(
        model: &Model<S>,
        structure: CovarianceStructure,
        prior_scale: f64,
        decay: Decay,
    ) -> Result<Self> {
        let p = model.system.param_dim();
        let theta_info = match structure {
            CovarianceStructure::Diagonal => InverseCovariance::zeros_diagonal(p),
            CovarianceStructure::Blocks => InverseCovariance::zeros_blocks(model.unit_blocks()?.into()),
        };
        let phi_info = model.readout.empty_information(structure);
        let q = phi_info.dim();
        Ok(UpdateRule::Kalman {
            theta: InformationFilter::new(theta_info, vec![prior_scale; p])?,
            phi: InformationFilter::new(phi_info, vec![prior_scale; q])?,
            decay,
        })
    }
}

/// A trainer consuming one symbol per call.
pub trait OnlineLearner {
    /// Scores `y` against the current prediction, learns from it, and reads
    /// it as the next input. Returns the loss in bits.
    fn tick(&mut self, y: usize) -> Result<f64>;

    /// Number of symbols consumed so far.
    fn steps(&self) -> u64;
}

/// RTRL or NoBackTrack, with a Euclidean or Kalman update.
#[derive(Debug, Clone)]
pub struct OnlineTrainer<S, E> {
    pub model: Model<S>,
    pub estimator: E,
    pub rule: UpdateRule,
    t: u64,
}

impl<S: DynamicalSystem, E: Sensitivity> OnlineTrainer<S, E> {
    pub fn new(model: Model<S>, estimator: E, rule: UpdateRule) -> Self {
        Self {
            model,
            estimator,
            rule,
            t: 0,
        }
    }

    /// Update step; returns the factored `J_theta + Lambda` for Kalman rules.
    fn update(&mut self, lg: &LossGrads, dtheta: &[f64]) -> Result<Option<Precision>> {
        let t = self.t;
        match &mut self.rule {
            UpdateRule::Sgd(eta) => {
                let e = eta.at(t);
                linalg::axpy(-e, &lg.grad_phi, &mut self.model.phi);
                linalg::axpy(-e, dtheta, &mut self.model.theta);
                Ok(None)
            }
            UpdateRule::Kalman { theta, phi, decay } => {
                let gamma = decay.at(t);
                let (phi_step, _) = phi.update(&lg.grad_phi, gamma)?;
                linalg::axpy(-1.0, &phi_step, &mut self.model.phi);
                let (theta_step, precision) = theta.update(dtheta, gamma)?;
                linalg::axpy(-1.0, &theta_step, &mut self.model.theta);
                Ok(Some(precision))
            }
        }
    }
}

impl<S: DynamicalSystem, E: Sensitivity> OnlineLearner for OnlineTrainer<S, E> {
    fn tick(&mut self, y: usize) -> Result<f64> {
        // observation
        let lg = self.model.observe(y)?;
        // update
        let dtheta = self.estimator.direction(&lg.grad_h);
        let precision = self.update(&lg, &dtheta)?;
        // reduction
        self.estimator.reduce(precision.as_ref());
        // transition
        let x = self.model.encode(y)?;
        let m = &self.model;
        let next = self.estimator.advance(&m.system, &m.h, &x, &m.theta)?;
        self.model.h = next;

        self.model.check_finite(self.t)?;
        let e = self.estimator.max_abs();
        if e > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step: self.t,
                what: format!("gradient estimate reached magnitude {e:e}"),
            });
        }
        self.t += 1;
        Ok(lg.loss)
    }

    fn steps(&self) -> u64 {
        self.t
    }
}

/// Total loss `sum_t l_t` of a symbol sequence at fixed parameters, starting
/// from `model.h`.
pub fn sequence_loss<S: DynamicalSystem>(model: &Model<S>, symbols: &[usize]) -> Result<f64> {
    let mut h = model.h.clone();
    let mut total = 0.0;
    for &y in symbols {
        let pred = model.readout.predict(&h, &model.phi)?;
        total += pred.loss_bits(y);
        let x = model.encode(y)?;
        h = model.system.step(&h, &x, &model.theta)?;
    }
    Ok(total)
}

/// Exact gradients of [`sequence_loss`] with respect to `(theta, phi)`, by RTRL.
pub fn sequence_gradient<S: DynamicalSystem>(model: &Model<S>, symbols: &[usize]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (sys, ro) = (&model.system, &model.readout);
    let mut h = model.h.clone();
    let mut g = FullJacobian::zeros(sys.state_dim(), sys.param_dim());
    let mut total = 0.0;
    let mut grad_theta = vec![0.0; sys.param_dim()];
    let mut grad_phi = vec![0.0; ro.param_dim()];
    for &y in symbols {
        let pred = ro.predict(&h, &model.phi)?;
        let lg = ro.loss_and_grads(&pred, y, &h, &model.phi)?;
        total += lg.loss;
        linalg::axpy(1.0, &g.loss_gradient(&lg.grad_h), &mut grad_theta);
        linalg::axpy(1.0, &lg.grad_phi, &mut grad_phi);
        let x = model.encode(y)?;
        g = rtrl_step(sys, &g, &h, &x, &model.theta)?;
        h = sys.step(&h, &x, &model.theta)?;
    }
    Ok((total, grad_theta, grad_phi))
}
