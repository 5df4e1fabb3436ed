//! Simulation and theory for the stationary tails of decentralized SGD on
//! Gaussian linear regression.

#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod kit;
pub mod quad;
pub mod recursion;
pub mod rng;
pub mod stats;
pub mod synthdata;
pub mod tailest;
pub mod theory;
pub mod topology;

pub use error::{Error, Result};
