//! Confidence calibration for sampled model generations.
//!
//! Repeated samples of the same query are reduced to self-consistency
//! targets ([`consistency`]), which train a single-pass calibrator
//! ([`calibrator`]) on unlabeled data. The remaining modules provide the
//! comparison scores, metrics, evaluation protocols, and a synthetic data
//! generator with known ground truth.

pub mod baselines;
pub mod calibrator;
pub mod consistency;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod records;
pub mod seed;
pub mod synth;

pub use error::{Diagnostic, Error, Result};
