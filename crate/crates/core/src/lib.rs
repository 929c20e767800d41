//! Error-maximizer active learning for neural-network regression surrogates.
//!
//! A surrogate MLP `Y` is trained against a trusted oracle `Z`; gradient
//! ascent on `|Y − Z|²` (backprop for `∇Y`, finite differences for `∇Z`)
//! mines the inputs where the surrogate is locally worst, and the surrogate is
//! retrained on the enriched set under an α-weighted objective.
//!
//! The data-parallel loops (labeling, evaluation, Monte Carlo, ascents) run on
//! rayon when the default `parallel` feature is on; see [`par::Exec`].

// Validation compares with `!(x > 0.0)` and the like so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod miner;
pub mod nn;
pub mod oracle;
pub mod par;

pub use error::{Error, Result};
