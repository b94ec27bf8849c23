use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nobacktrack::dynsys::Activation;
use nobacktrack::estimators::{CovarianceStructure, ScalingRule};
use nobacktrack::harness::{self, Algorithm, CheckOptions, DataSource, ModelKind, RunConfig, TraceWriter};
use nobacktrack::Error;

const EXIT_DIVERGED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "nobacktrack", version, about = "Online training of recurrent networks from rank-one gradient estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a character stream and write the loss curve as CSV.
    Train(TrainArgs),
    /// Write an a^n b^n dataset.
    GenAnbn(GenArgs),
    /// Run the built-in gradient and estimator checks.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Rtrl,
    NbtEuclid,
    NbtKalman,
    KalmanRtrl,
    Tbptt,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Rnn,
    Lrnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    Euclidean,
    Invariant,
    Unit,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovarianceArg {
    Diagonal,
    Blocks,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    #[arg(long, value_enum, default_value = "lrnn")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "sigmoid")]
    activation: ActivationArg,
    #[arg(long, default_value_t = 20)]
    units: usize,
    /// Lower end of the leak range (lrnn only).
    #[arg(long, default_value_t = 0.8)]
    leak_min: f64,
    /// Upper end of the leak range, exclusive (lrnn only).
    #[arg(long, default_value_t = 1.0)]
    leak_max: f64,
    /// Multiplier on the initial recurrent and input weights.
    #[arg(long, default_value_t = 0.3)]
    init_scale: f64,
    /// Rank-one pairs (nbt-* only, default 1).
    #[arg(long)]
    rank: Option<usize>,
    /// Reduction scaling (nbt-* only, default euclidean).
    #[arg(long, value_enum)]
    scaling: Option<ScalingArg>,
    /// Window length (tbptt only, default 15).
    #[arg(long)]
    truncation: Option<usize>,
    /// Base learning rate, eta_t = eta0 / sqrt(t) (not for Kalman rules, default 1).
    #[arg(long)]
    eta0: Option<f64>,
    /// Decay constant c, gamma_t = min(0.99, c / sqrt(t)) (Kalman rules, default 1).
    #[arg(long)]
    gamma_c: Option<f64>,
    /// Prior Lambda = scale * Id (Kalman rules, default: three times the number of units).
    #[arg(long)]
    lambda_scale: Option<f64>,
    /// Inverse covariance structure (Kalman rules, default diagonal).
    #[arg(long, value_enum)]
    covariance: Option<CovarianceArg>,
    /// Seeds; more than one runs a concurrent sweep.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,
    /// Train on this file instead of a^n b^n.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Wrap around at the end of the text file.
    #[arg(long, requires = "text")]
    cycle: bool,
    #[arg(long, default_value_t = 1)]
    anbn_k: u32,
    #[arg(long, default_value_t = 32)]
    anbn_l: u32,
    #[arg(long, default_value_t = 1000)]
    report_interval: u64,
    /// Character budget (default 1000000 unless a time budget is given).
    #[arg(long)]
    max_chars: Option<u64>,
    /// Wall-time budget in seconds.
    #[arg(long)]
    max_seconds: Option<f64>,
    /// Constant reference column, as NAME=BITS_PER_CHAR (repeatable).
    #[arg(long = "baseline", value_parser = parse_baseline)]
    baselines: Vec<(String, f64)>,
    /// CSV path; standard output if omitted. With several seeds, `-seed<N>` is
    /// inserted before the extension.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    k: u32,
    #[arg(long, default_value_t = 32)]
    l: u32,
    #[arg(long, default_value_t = 1_000_000)]
    chars: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb the state Jacobian (negative control).
    #[arg(long, hide = true)]
    corrupt_jacobian: bool,
}

fn parse_baseline(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let v = value.parse::<f64>().map_err(|e| e.to_string())?;
    Ok((name.to_string(), v))
}

impl TrainArgs {
    fn config(&self, seed: u64) -> RunConfig {
        let mut c = RunConfig::new(match self.algorithm {
            AlgorithmArg::Rtrl => Algorithm::Rtrl,
            AlgorithmArg::NbtEuclid => Algorithm::NbtEuclid,
            AlgorithmArg::NbtKalman => Algorithm::NbtKalman,
            AlgorithmArg::KalmanRtrl => Algorithm::KalmanRtrl,
            AlgorithmArg::Tbptt => Algorithm::Tbptt,
        });
        c.model = match self.model {
            ModelArg::Rnn => ModelKind::Rnn,
            ModelArg::Lrnn => ModelKind::Lrnn,
        };
        c.activation = match self.activation {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Sigmoid => Activation::Sigmoid,
        };
        c.units = self.units;
        c.leak_range = (self.leak_min, self.leak_max);
        c.init_scale = self.init_scale;
        c.rank = self.rank;
        c.scaling = self.scaling.map(|v| match v {
            ScalingArg::Euclidean => ScalingRule::Euclidean,
            ScalingArg::Invariant => ScalingRule::Invariant,
            ScalingArg::Unit => ScalingRule::Unit,
        });
        c.truncation = self.truncation;
        c.eta0 = self.eta0;
        c.gamma_c = self.gamma_c;
        c.lambda_scale = self.lambda_scale;
        c.covariance = self.covariance.map(|v| match v {
            CovarianceArg::Diagonal => CovarianceStructure::Diagonal,
            CovarianceArg::Blocks => CovarianceStructure::Blocks,
        });
        c.seed = seed;
        c.data = match &self.text {
            Some(path) => DataSource::File {
                path: path.clone(),
                cycle: self.cycle,
            },
            None => DataSource::Anbn {
                k: self.anbn_k,
                l: self.anbn_l,
            },
        };
        c.report_interval = self.report_interval;
        c.max_chars = match (self.max_chars, self.max_seconds) {
            (None, None) => Some(1_000_000),
            (m, _) => m,
        };
        c.max_seconds = self.max_seconds;
        c.baselines = self.baselines.clone();
        c.fill_defaults();
        c
    }
}

fn seeded_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}-seed{seed}"),
    };
    path.with_file_name(name)
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::UnknownSymbol { .. } | Error::Read { .. } => {
            ExitCode::from(EXIT_CONFIG)
        }
        Error::Diverged { .. } => ExitCode::from(EXIT_DIVERGED),
        _ => ExitCode::FAILURE,
    }
}

fn cmd_train(args: &TrainArgs) -> ExitCode {
    let configs: Vec<RunConfig> = args.seed.iter().map(|&s| args.config(s)).collect();
    for c in &configs {
        if let Err(e) = c.validate() {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    }
    for c in &configs {
        eprintln!("# {c}");
    }

    let results = if configs.len() == 1 {
        let c = &configs[0];
        let out: Box<dyn Write + Send> = match &args.out {
            Some(p) => match File::create(p) {
                Ok(f) => Box::new(BufWriter::new(f)),
                Err(e) => {
                    eprintln!("error: cannot create {}: {e}", p.display());
                    return ExitCode::FAILURE;
                }
            },
            None => Box::new(io::stdout()),
        };
        vec![TraceWriter::new(out, c).and_then(|mut w| harness::train(c, Some(&mut w)))]
    } else {
        let Some(base) = &args.out else {
            eprintln!("error: a sweep over several seeds needs --out");
            return ExitCode::from(EXIT_CONFIG);
        };
        let mut jobs = Vec::new();
        for c in configs.iter().cloned() {
            let path = seeded_path(base, c.seed);
            let writer = File::create(&path)
                .map_err(Error::Io)
                .and_then(|f| TraceWriter::new(BufWriter::new(f), &c));
            match writer {
                Ok(w) => jobs.push((c, Some(w))),
                Err(e) => {
                    eprintln!("error: cannot create {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
        }
        harness::sweep(jobs)
    };

    let mut code = ExitCode::SUCCESS;
    for (c, r) in configs.iter().zip(results) {
        match r {
            Ok(outcome) => {
                if let Some(e) = &outcome.diverged {
                    eprintln!("seed {}: {e}", c.seed);
                    code = ExitCode::from(EXIT_DIVERGED);
                } else if outcome.chars_read > 0 {
                    eprintln!(
                        "seed {}: {} chars, average loss {:.6} bits/char",
                        c.seed,
                        outcome.chars_read,
                        outcome.average_loss()
                    );
                }
            }
            Err(e) => {
                eprintln!("seed {}: error: {e}", c.seed);
                code = exit_for(&e);
            }
        }
    }
    code
}

fn cmd_check(args: &CheckArgs) -> ExitCode {
    let opts = CheckOptions {
        seed: args.seed,
        corrupt_jacobian: args.corrupt_jacobian,
    };
    match harness::run_checks(&opts) {
        Ok(results) => {
            for r in &results {
                println!("{r}");
            }
            if results.iter().all(|r| r.passed()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::GenAnbn(a) => match harness::gen_anbn_file(a.k, a.l, a.chars, a.seed, &a.out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                exit_for(&e)
            }
        },
        Command::Check(args) => cmd_check(&args),
    }
}
