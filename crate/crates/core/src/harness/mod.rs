//! Experiment plumbing: run configuration, training runs with CSV loss
//! traces, dataset generation and self-checks.

pub mod check;
pub mod config;
pub mod train;

pub use check::{run_checks, CheckOptions, CheckResult};
pub use config::{Algorithm, DataSource, ModelKind, RunConfig};
pub use train::{build_learner, build_model, sweep, train, LossTrace, TraceRow, TraceWriter, TrainOutcome};

use std::path::Path;

use crate::data;
use crate::error::{Error, Result};

/// Writes `gen_anbn(k, l, chars, seed)` to `out`.
pub fn gen_anbn_file(k: u32, l: u32, chars: usize, seed: u64, out: &Path) -> Result<()> {
    let bytes = data::gen_anbn_bytes(k, l, chars, seed)?;
    std::fs::write(out, bytes).map_err(Error::Io)
}
