use crate::error::{Error, Result};

/// `eta_t = eta0 / sqrt(max(t, 1))`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRate {
    pub eta0: f64,
}

impl LearningRate {
    pub fn at(&self, t: u64) -> f64 {
        self.eta0 / (t.max(1) as f64).sqrt()
    }
}

/// Covariance decay `gamma_t = min(cap, c / sqrt(max(t, 1)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decay {
    pub c: f64,
    pub cap: f64,
}

impl Default for Decay {
    fn default() -> Self {
        Self { c: 1.0, cap: 0.99 }
    }
}

impl Decay {
    pub fn new(c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::Config(format!("decay constant must be >= 0, got {c}")));
        }
        Ok(Self { c, cap: 0.99 })
    }

    pub fn at(&self, t: u64) -> f64 {
        (self.c / (t.max(1) as f64).sqrt()).min(self.cap)
    }
}

/// Hyperparameters shared by all trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    /// Base learning rate for the Euclidean rules and truncated BPTT.
    pub learning_rate: LearningRate,
    /// Covariance decay for the Kalman rules.
    pub decay: Decay,
    /// `Lambda = prior_scale * Id` for both `theta` and `phi`.
    pub prior_scale: f64,
    /// Number of independent rank-one states.
    pub rank: usize,
    /// Truncation window of truncated BPTT.
    pub truncation: usize,
}

impl TrainingSchedule {
    /// Defaults for a network with `n_units` units: `eta0 = 1`, `c = 1`,
    /// `Lambda = 3 n_units * Id`, rank 1, truncation 15.
    pub fn for_units(n_units: usize) -> Self {
        Self {
            learning_rate: LearningRate { eta0: 1.0 },
            decay: Decay::default(),
            prior_scale: 3.0 * n_units as f64,
            rank: 1,
            truncation: 15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.eta0 >= 0.0) {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        if !(self.prior_scale > 0.0) {
            return Err(Error::Config("prior scale must be > 0".into()));
        }
        if self.rank == 0 {
            return Err(Error::Config("rank must be >= 1".into()));
        }
        if self.truncation == 0 {
            return Err(Error::Config("truncation must be >= 1".into()));
        }
        Ok(())
    }
}
