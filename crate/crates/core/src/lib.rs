//! Trajectory privacy laboratory.
//!
//! Differentially private trajectory publication (CNoise, SDD), the RAoPT
//! reconstruction attack against them, and the metrics and experiment
//! harness used to measure how much of an original trajectory the attack
//! recovers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod encoding;
pub mod error;
pub mod geo;
pub mod harness;
pub mod mechanisms;
pub mod metrics;
pub mod model;
pub mod neuralnet;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
