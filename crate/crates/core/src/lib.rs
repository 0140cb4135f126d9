//! Beam-current drift simulation and time-resolved yield estimation.

// `!(x > 0.0)` is the NaN-rejecting form used throughout validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// frozen oracle constants keep their full printed digits
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod acquisition;
pub mod alternating;
pub mod beam_model;
pub mod dft_nulling;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod grid;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod sequential_filter;

pub use error::{Error, Result};
