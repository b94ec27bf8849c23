use std::io::Write;
use std::time::Instant;

use crate::data::{self, AnbnSource, Alphabet};
use crate::dynsys::{DynamicalSystem, Rnn};
use crate::error::{Error, Result};
use crate::estimators::{
    Decay, ExactSensitivity, LearningRate, Model, NbtSensitivity, OnlineLearner, OnlineTrainer,
    TbpttTrainer, UpdateRule,
};
use crate::readout::{OutputParams, Readout};
use crate::rng::{self, RandomSigns};

use super::config::{Algorithm, DataSource, ModelKind, RunConfig};

/// Symbol indices fed to a trainer.
pub enum SymbolSource {
    Anbn { alphabet: Alphabet, bytes: AnbnSource },
    Text(data::CharStream),
}

impl SymbolSource {
    pub fn open(config: &RunConfig) -> Result<Self> {
        Ok(match &config.data {
            DataSource::Anbn { k, l } => SymbolSource::Anbn {
                alphabet: Alphabet::from_bytes(b"\nab"),
                bytes: AnbnSource::new(*k, *l, config.seed)?,
            },
            DataSource::File { path, cycle } => SymbolSource::Text(data::load_text(path, *cycle)?),
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        match self {
            SymbolSource::Anbn { alphabet, .. } => alphabet,
            SymbolSource::Text(s) => s.alphabet(),
        }
    }
}

impl Iterator for SymbolSource {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            SymbolSource::Anbn { alphabet, bytes } => bytes.next().and_then(|b| alphabet.index_of(b)),
            SymbolSource::Text(s) => s.next(),
        }
    }
}

/// Initial model: Gaussian recurrent and input weights times `init_scale`,
/// uniform leaks in `leak_range` for `lrnn`, zero biases and zero readout,
/// all drawn from the run seed.
pub fn build_model(config: &RunConfig, n_symbols: usize) -> Result<Model<Rnn>> {
    let mut r = rng::stream(config.seed, rng::STREAM_INIT);
    let rnn = match config.model {
        ModelKind::Rnn => Rnn::fully_connected(config.units, n_symbols, config.activation)?,
        ModelKind::Lrnn => Rnn::leaky_uniform(config.units, n_symbols, config.activation, config.leak_range, &mut r)?,
    };
    let theta: Vec<f64> = rnn.init_params(&mut r).to_flat().into_iter().map(|x| x * config.init_scale).collect();
    let readout = Readout::new(config.units, n_symbols, config.activation);
    let phi = OutputParams::zeros(&readout).to_flat();
    Model::new(rnn, readout, theta, phi)
}

pub fn build_learner(config: &RunConfig, n_symbols: usize) -> Result<Box<dyn OnlineLearner + Send>> {
    config.validate()?;
    let mut config = config.clone();
    config.fill_defaults();
    let model = build_model(&config, n_symbols)?;
    let (n, p) = (model.system.state_dim(), model.system.param_dim());
    let signs = || RandomSigns::new(config.seed, rng::STREAM_SIGNS);
    let sgd = || UpdateRule::Sgd(LearningRate {
        eta0: config.eta0.expect("defaulted"),
    });
    let kalman = |model: &Model<Rnn>| {
        UpdateRule::kalman(
            model,
            config.covariance.expect("defaulted"),
            config.lambda_scale.expect("defaulted"),
            Decay::new(config.gamma_c.expect("defaulted"))?,
        )
    };
    Ok(match config.algorithm {
        Algorithm::Rtrl => Box::new(OnlineTrainer::new(model, ExactSensitivity::new(n, p), sgd())),
        Algorithm::KalmanRtrl => {
            let rule = kalman(&model)?;
            Box::new(OnlineTrainer::new(model, ExactSensitivity::new(n, p), rule))
        }
        Algorithm::NbtEuclid => {
            let est = NbtSensitivity::new(n, p, config.rank.expect("defaulted"), config.scaling.expect("defaulted"), signs());
            Box::new(OnlineTrainer::new(model, est, sgd()))
        }
        Algorithm::NbtKalman => {
            let rule = kalman(&model)?;
            let est = NbtSensitivity::new(n, p, config.rank.expect("defaulted"), config.scaling.expect("defaulted"), signs());
            Box::new(OnlineTrainer::new(model, est, rule))
        }
        Algorithm::Tbptt => Box::new(TbpttTrainer::new(
            model,
            LearningRate {
                eta0: config.eta0.expect("defaulted"),
            },
            config.truncation.expect("defaulted"),
        )?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub chars_read: u64,
    /// Cumulative average loss `sum_t l_t / chars_read`, in bits per character.
    pub avg_loss_bits: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// CSV sink: a header, then one flushed row per report. Baseline columns
/// repeat their constant value on every row.
pub struct TraceWriter<W: Write> {
    csv: csv::Writer<W>,
    baselines: Vec<f64>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, config: &RunConfig) -> Result<Self> {
        let mut csv = csv::Writer::from_writer(out);
        let mut header = vec!["chars_read".to_string(), "avg_loss_bits".into(), "wall_seconds".into()];
        header.extend(config.baselines.iter().map(|(name, _)| name.clone()));
        csv.write_record(&header).map_err(csv_error)?;
        csv.flush()?;
        Ok(Self {
            csv,
            baselines: config.baselines.iter().map(|(_, v)| *v).collect(),
        })
    }

    pub fn write_row(&mut self, row: &TraceRow) -> Result<()> {
        let mut record = vec![
            row.chars_read.to_string(),
            format!("{:.9}", row.avg_loss_bits),
            format!("{:.3}", row.wall_seconds),
        ];
        record.extend(self.baselines.iter().map(|v| v.to_string()));
        self.csv.write_record(&record).map_err(csv_error)?;
        self.csv.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub trace: LossTrace,
    pub chars_read: u64,
    pub total_loss_bits: f64,
    /// Set when the divergence guard stopped the run; the trace holds every row before it.
    pub diverged: Option<Error>,
}

impl TrainOutcome {
    pub fn average_loss(&self) -> f64 {
        if self.chars_read == 0 {
            f64::NAN
        } else {
            self.total_loss_bits / self.chars_read as f64
        }
    }
}

/// Runs `config` to its character or wall-time budget, reporting every
/// `report_interval` characters and once more at the end.
pub fn train<W: Write>(config: &RunConfig, mut sink: Option<&mut TraceWriter<W>>) -> Result<TrainOutcome> {
    config.validate()?;
    let mut source = SymbolSource::open(config)?;
    let mut learner = build_learner(config, source.alphabet().len())?;

    let start = Instant::now();
    let mut trace = LossTrace::default();
    let mut total = 0.0;
    let mut t = 0u64;
    let mut diverged = None;
    let mut emit = |t: u64, total: f64, trace: &mut LossTrace| -> Result<()> {
        let row = TraceRow {
            chars_read: t,
            avg_loss_bits: total / t as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(w) = sink.as_deref_mut() {
            w.write_row(&row)?;
        }
        trace.rows.push(row);
        Ok(())
    };

    loop {
        if config.max_chars.is_some_and(|m| t >= m) {
            break;
        }
        if config.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() >= s) {
            break;
        }
        let Some(y) = source.next() else { break };
        match learner.tick(y) {
            Ok(loss) => {
                total += loss;
                t += 1;
            }
            Err(e @ Error::Diverged { .. }) => {
                diverged = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
        if t.is_multiple_of(config.report_interval) {
            emit(t, total, &mut trace)?;
        }
    }
    if t > 0 && trace.last().is_none_or(|r| r.chars_read != t) {
        emit(t, total, &mut trace)?;
    }
    Ok(TrainOutcome {
        trace,
        chars_read: t,
        total_loss_bits: total,
        diverged,
    })
}

/// Runs independent configurations on separate threads; results keep the input order.
pub fn sweep<W: Write + Send>(jobs: Vec<(RunConfig, Option<TraceWriter<W>>)>) -> Vec<Result<TrainOutcome>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(c, mut w)| s.spawn(move || train(&c, w.as_mut())))
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    })
}
