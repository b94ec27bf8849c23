//! Online training of recurrent models from unbiased rank-one gradient estimates.
//!
//! The crate provides dynamical systems with sparse parameter Jacobians
//! ([`dynsys`]), the rank-one reduction ([`rankone`]), gradient estimators
//! and training loops ([`estimators`]), a softmax readout ([`readout`]),
//! data streams ([`data`]) and an experiment harness ([`harness`]).

pub mod data;
pub mod dynsys;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod rankone;
pub mod readout;
pub mod rng;

pub use error::{Error, Result};
