//! Simulation of decentralized stochastic optimization over graphs.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algorithms;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod oracles;
pub mod problems;
pub mod rng;
pub mod stacked;

pub use error::{Error, Result};
