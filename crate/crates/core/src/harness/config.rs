use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::dynsys::Activation;
use crate::error::{Error, Result};
use crate::estimators::{CovarianceStructure, ScalingRule, TrainingSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Rtrl,
    NbtEuclid,
    NbtKalman,
    KalmanRtrl,
    Tbptt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Rtrl,
        Algorithm::NbtEuclid,
        Algorithm::NbtKalman,
        Algorithm::KalmanRtrl,
        Algorithm::Tbptt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Rtrl => "rtrl",
            Algorithm::NbtEuclid => "nbt-euclid",
            Algorithm::NbtKalman => "nbt-kalman",
            Algorithm::KalmanRtrl => "kalman-rtrl",
            Algorithm::Tbptt => "tbptt",
        }
    }

    pub fn is_nbt(self) -> bool {
        matches!(self, Algorithm::NbtEuclid | Algorithm::NbtKalman)
    }

    pub fn is_kalman(self) -> bool {
        matches!(self, Algorithm::NbtKalman | Algorithm::KalmanRtrl)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    /// Fully connected vanilla network.
    Rnn,
    /// Fully connected network with random fixed leaks.
    #[default]
    Lrnn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Rnn => "rnn",
            ModelKind::Lrnn => "lrnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Fresh `a^n b^n` blocks with `n` uniform in `[k, l]`.
    Anbn { k: u32, l: u32 },
    /// Bytes of a file, wrapping around at the end when `cycle` is set.
    File { path: PathBuf, cycle: bool },
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Anbn { k, l } => write!(f, "anbn[{k},{l}]"),
            DataSource::File { path, cycle } => write!(f, "file:{}{}", path.display(), if *cycle { ":cycle" } else { "" }),
        }
    }
}

/// One training run. Options that do not apply to the algorithm must be `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub model: ModelKind,
    pub activation: Activation,
    pub units: usize,
    /// Range of the fixed leaks `alpha_i` (leaky model only).
    pub leak_range: (f64, f64),
    /// Multiplier on the initial recurrent and input weights.
    pub init_scale: f64,
    /// Rank-one pairs (NoBackTrack only).
    pub rank: Option<usize>,
    /// Reduction scaling rule (NoBackTrack only).
    pub scaling: Option<ScalingRule>,
    /// Window length (truncated BPTT only).
    pub truncation: Option<usize>,
    /// Base learning rate (Euclidean rules and truncated BPTT).
    pub eta0: Option<f64>,
    /// Decay constant `c` in `gamma_t = min(0.99, c / sqrt t)` (Kalman rules).
    pub gamma_c: Option<f64>,
    /// `Lambda = lambda_scale * Id` (Kalman rules); defaults to three times the number of units.
    pub lambda_scale: Option<f64>,
    /// Inverse covariance structure (Kalman rules).
    pub covariance: Option<CovarianceStructure>,
    pub seed: u64,
    pub data: DataSource,
    pub report_interval: u64,
    pub max_chars: Option<u64>,
    pub max_seconds: Option<f64>,
    /// Constant reference columns echoed into the CSV.
    pub baselines: Vec<(String, f64)>,
}

impl RunConfig {
    /// Default settings for `algorithm`: leaky sigmoid network with 20 units,
    /// leaks in `[0.8, 1)` and weights at 0.3 times the usual scale, on
    /// `a^n b^n [1, 32]`, `eta_t = 1/sqrt t`, `Lambda = 3n Id`, rank 1, `T = 15`.
    pub fn new(algorithm: Algorithm) -> Self {
        let mut c = Self {
            algorithm,
            model: ModelKind::Lrnn,
            activation: Activation::Sigmoid,
            units: 20,
            leak_range: (0.8, 1.0),
            init_scale: 0.3,
            rank: None,
            scaling: None,
            truncation: None,
            eta0: None,
            gamma_c: None,
            lambda_scale: None,
            covariance: None,
            seed: 0,
            data: DataSource::Anbn { k: 1, l: 32 },
            report_interval: 1000,
            max_chars: Some(1_000_000),
            max_seconds: None,
            baselines: Vec::new(),
        };
        c.fill_defaults();
        c
    }

    /// Sets every option relevant to the algorithm that is still unset.
    pub fn fill_defaults(&mut self) {
        let a = self.algorithm;
        let d = TrainingSchedule::for_units(self.units);
        if a.is_nbt() {
            self.rank.get_or_insert(d.rank);
            self.scaling.get_or_insert(ScalingRule::Euclidean);
        }
        if a == Algorithm::Tbptt {
            self.truncation.get_or_insert(d.truncation);
        }
        if !a.is_kalman() {
            self.eta0.get_or_insert(d.learning_rate.eta0);
        } else {
            self.gamma_c.get_or_insert(d.decay.c);
            self.lambda_scale.get_or_insert(d.prior_scale);
            self.covariance.get_or_insert(CovarianceStructure::Diagonal);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.algorithm;
        let misplaced = |set: bool, what: &str, allowed: bool| -> Result<()> {
            if set && !allowed {
                Err(Error::Config(format!("{what} does not apply to {a}")))
            } else {
                Ok(())
            }
        };
        misplaced(self.rank.is_some(), "rank", a.is_nbt())?;
        misplaced(self.scaling.is_some(), "scaling rule", a.is_nbt())?;
        misplaced(self.truncation.is_some(), "truncation", a == Algorithm::Tbptt)?;
        misplaced(self.eta0.is_some(), "learning rate", !a.is_kalman())?;
        misplaced(self.gamma_c.is_some(), "decay constant", a.is_kalman())?;
        misplaced(self.lambda_scale.is_some(), "prior scale", a.is_kalman())?;
        misplaced(self.covariance.is_some(), "covariance structure", a.is_kalman())?;

        if self.units == 0 {
            return Err(Error::Config("units must be at least 1".into()));
        }
        let (lo, hi) = self.leak_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("leak range [{lo}, {hi}) is empty")));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!("init scale must be finite and >= 0, got {}", self.init_scale)));
        }
        if self.rank == Some(0) {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if self.truncation == Some(0) {
            return Err(Error::Config("truncation must be at least 1".into()));
        }
        if let Some(e) = self.eta0 {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("learning rate must be finite and >= 0, got {e}")));
            }
        }
        if let Some(c) = self.gamma_c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("decay constant must be finite and >= 0, got {c}")));
            }
        }
        if let Some(s) = self.lambda_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("prior scale must be finite and > 0, got {s}")));
            }
        }
        if self.report_interval == 0 {
            return Err(Error::Config("report interval must be at least 1".into()));
        }
        if self.max_chars.is_none() && self.max_seconds.is_none() {
            return Err(Error::Config("set a character or a wall-time budget".into()));
        }
        if let Some(s) = self.max_seconds {
            if !(s >= 0.0) {
                return Err(Error::Config(format!("wall-time budget must be >= 0, got {s}")));
            }
        }
        if let DataSource::Anbn { k, l } = self.data {
            if k < 1 || k > l {
                return Err(Error::Config(format!("block length range [{k}, {l}] needs 1 <= k <= l")));
            }
        }
        for (name, _) in &self.baselines {
            if name.is_empty() || name.contains([',', '"', '\n']) {
                return Err(Error::Config(format!("invalid baseline column name '{name}'")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    /// `key=value` pairs separated by spaces.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let act = match self.activation {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        };
        write!(
            f,
            "algorithm={} model={} activation={act} units={} init_scale={} seed={} data={} report_interval={}",
            self.algorithm, self.model, self.units, self.init_scale, self.seed, self.data, self.report_interval
        )?;
        if self.model == ModelKind::Lrnn {
            write!(f, " leak_range=[{},{})", self.leak_range.0, self.leak_range.1)?;
        }
        if let Some(k) = self.rank {
            write!(f, " rank={k}")?;
        }
        if let Some(r) = self.scaling {
            write!(f, " scaling={}", match r {
                ScalingRule::Euclidean => "euclidean",
                ScalingRule::Invariant => "invariant",
                ScalingRule::Unit => "unit",
            })?;
        }
        if let Some(t) = self.truncation {
            write!(f, " truncation={t}")?;
        }
        if let Some(e) = self.eta0 {
            write!(f, " eta0={e}")?;
        }
        if let Some(c) = self.gamma_c {
            write!(f, " gamma_c={c}")?;
        }
        if let Some(s) = self.lambda_scale {
            write!(f, " lambda_scale={s}")?;
        }
        if let Some(c) = self.covariance {
            let c = match c {
                CovarianceStructure::Diagonal => "diagonal",
                CovarianceStructure::Blocks => "blocks",
            };
            write!(f, " covariance={c}")?;
        }
        if let Some(m) = self.max_chars {
            write!(f, " max_chars={m}")?;
        }
        if let Some(s) = self.max_seconds {
            write!(f, " max_seconds={s}")?;
        }
        for (name, v) in &self.baselines {
            write!(f, " baseline.{name}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_for_every_algorithm() {
        for a in Algorithm::ALL {
            let c = RunConfig::new(a);
            c.validate().unwrap();
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
    }

    #[test]
    fn options_checked_against_algorithm() {
        let mut c = RunConfig::new(Algorithm::Rtrl);
        c.truncation = Some(5);
        assert!(c.validate().is_err());
        let mut c = RunConfig::new(Algorithm::Tbptt);
        c.rank = Some(2);
        assert!(c.validate().is_err());
        let mut c = RunConfig::new(Algorithm::NbtKalman);
        c.eta0 = Some(0.1);
        assert!(c.validate().is_err());
        assert!("bptt".parse::<Algorithm>().is_err());
    }

    #[test]
    fn budget_required() {
        let mut c = RunConfig::new(Algorithm::Rtrl);
        c.max_chars = None;
        assert!(c.validate().is_err());
        c.max_seconds = Some(1.0);
        c.validate().unwrap();
    }
}
