//! Estimation from nonprobability samples by matching them to a probability
//! sample, transferring the probability-sample weights and optionally
//! calibrating the result.
//!
//! The crate covers the whole chain: superpopulation generation
//! ([`population`]), sampling designs ([`sampling`]), matching
//! ([`matching`]), regression fits ([`regress`]), calibration
//! ([`calibrate`]), point and variance estimators ([`estimators`],
//! [`variance`]), replicated studies ([`montecarlo`]) and file I/O ([`io`]).
//!
//! Replicate loops run on rayon when the default `parallel` feature is on.
//! Results do not depend on the number of threads.

pub mod calibrate;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod io;
pub mod linalg;
pub mod matching;
pub mod montecarlo;
pub mod population;
pub mod regress;
pub mod rng;
pub mod sampling;
pub mod variance;

pub use error::{Error, Result};
pub use exec::Execution;
