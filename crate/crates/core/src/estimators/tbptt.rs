//! Truncated backpropagation through time.
//!
//! The stream is cut into consecutive windows of `T` transitions. A window
//! starts from the state reached at its first tick, treated as a constant,
//! and scores the `T` symbols that follow. At the end of the window the
//! summed gradients are applied once with the current learning rate.

use crate::dynsys::DynamicalSystem;
use crate::error::{Error, Result};
use crate::estimators::schedule::LearningRate;
use crate::estimators::trainer::{guard, Model, OnlineLearner};
use crate::linalg;

/// Loss and gradients of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowGradient {
    pub loss: f64,
    pub grad_theta: Vec<f64>,
    pub grad_phi: Vec<f64>,
}

/// Backpropagates through `inputs.len()` transitions from `h_start`.
///
/// Transition `k` reads `inputs[k]`; the state it produces is scored
/// against `targets[k]`. Parameters are taken from `model`; `model.h` is
/// ignored.
pub fn window_gradient<S: DynamicalSystem>(
    model: &Model<S>,
    h_start: &[f64],
    inputs: &[usize],
    targets: &[usize],
) -> Result<WindowGradient> {
    if inputs.len() != targets.len() {
        return Err(Error::Dimension {
            context: "window targets",
            expected: inputs.len(),
            actual: targets.len(),
        });
    }
    let sys = &model.system;
    let theta = &model.theta;
    let steps = inputs.len();

    let mut states = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps);
    states.push(h_start.to_vec());
    for &y in inputs {
        let x = model.encode(y)?;
        let next = sys.step(states.last().expect("non-empty"), &x, theta)?;
        states.push(next);
        xs.push(x);
    }

    let mut loss = 0.0;
    let mut grad_theta = vec![0.0; sys.param_dim()];
    let mut grad_phi = vec![0.0; model.readout.param_dim()];
    let mut delta = vec![0.0; sys.state_dim()];
    for k in (0..steps).rev() {
        let h = &states[k + 1];
        let pred = model.readout.predict(h, &model.phi)?;
        let lg = model.readout.loss_and_grads(&pred, targets[k], h, &model.phi)?;
        loss += lg.loss;
        linalg::axpy(1.0, &lg.grad_phi, &mut grad_phi);
        linalg::axpy(1.0, &lg.grad_h, &mut delta);
        let rows = sys.param_rows(&states[k], &xs[k], theta)?;
        for (d, row) in delta.iter().zip(&rows) {
            if *d != 0.0 {
                row.axpy_into(*d, &mut grad_theta);
            }
        }
        delta = sys.vjp_state(&states[k], &xs[k], theta, &delta)?;
    }
    Ok(WindowGradient {
        loss,
        grad_theta,
        grad_phi,
    })
}

/// Online TBPTT with plain gradient steps.
#[derive(Debug, Clone)]
pub struct TbpttTrainer<S> {
    pub model: Model<S>,
    pub learning_rate: LearningRate,
    truncation: usize,
    window_start: Vec<f64>,
    window: Vec<usize>,
    t: u64,
}

impl<S: DynamicalSystem> TbpttTrainer<S> {
    pub fn new(model: Model<S>, learning_rate: LearningRate, truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::Config("truncation length must be at least 1".into()));
        }
        let window_start = model.h.clone();
        Ok(Self {
            model,
            learning_rate,
            truncation,
            window_start,
            window: Vec::with_capacity(truncation + 1),
            t: 0,
        })
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }
}

impl<S: DynamicalSystem> OnlineLearner for TbpttTrainer<S> {
    fn tick(&mut self, y: usize) -> Result<f64> {
        let pred = self.model.readout.predict(&self.model.h, &self.model.phi)?;
        let loss = pred.loss_bits(y);
        self.window.push(y);

        if self.window.len() == self.truncation + 1 {
            let wg = window_gradient(
                &self.model,
                &self.window_start,
                &self.window[..self.truncation],
                &self.window[1..],
            )?;
            let eta = self.learning_rate.at(self.t);
            linalg::axpy(-eta, &wg.grad_theta, &mut self.model.theta);
            linalg::axpy(-eta, &wg.grad_phi, &mut self.model.phi);
            guard(self.t, "gradient", &wg.grad_theta)?;
            self.window_start.clone_from(&self.model.h);
            self.window.clear();
            self.window.push(y);
        }

        let x = self.model.encode(y)?;
        self.model.h = self.model.system.step(&self.model.h, &x, &self.model.theta)?;
        self.model.check_finite(self.t)?;
        self.t += 1;
        Ok(loss)
    }

    fn steps(&self) -> u64 {
        self.t
    }
}
