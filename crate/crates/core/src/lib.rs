//! Deterministic discrete-event simulation of shared bicycle fleets.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod demandio;
pub mod engine;
pub mod error;
pub mod geo;
pub mod metrics;
pub mod modes;
pub mod par;
pub mod rebalance;
pub mod routing;
pub mod runner;

pub use error::{Error, Result};
