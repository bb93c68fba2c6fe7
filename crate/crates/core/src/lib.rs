//! Simulation of piecewise deterministic Markov processes with a linear
//! post-jump map, and nonparametric estimation of their jump rate from the
//! embedded jump chain.
//!
//! The pipeline is: [`model`] defines the process, [`simulate`] draws the jump
//! chain, [`basis`] and [`density`] build the adaptive projection estimate of
//! the stationary density, and [`jumprate`] turns it into the quotient
//! estimator of the jump rate. [`bench`] runs replicated experiments and
//! [`config`] loads the run configuration.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod bench;
pub mod config;
pub mod density;
pub mod error;
pub mod jumprate;
pub mod model;
pub mod numeric;
pub mod simulate;

pub use error::{Error, Result};
