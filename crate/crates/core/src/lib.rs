//! Doubly distributed estimation for high-dimensional correlated outcomes.
//!
//! The response vector of every subject is cut into `J` blocks and the
//! subjects are cut into `K` groups. Each of the `J x K` blocks is fitted on
//! its own (GEE or pairwise composite likelihood), and the block estimates are
//! merged in closed form by a GMM-type meta-estimator that accounts for the
//! dependence between blocks through the per-subject estimating functions.
//!
//! Pipeline:
//!
//! 1. [`partition`] ingests long-format data and performs the double split.
//! 2. [`block_engines`] fits each block and exports scores and sensitivities.
//! 3. [`combiner`] builds the weight matrix and the combined estimator.
//! 4. [`inference`] turns the Godambe information into standard errors,
//!    confidence intervals and the over-identification test.
//! 5. [`simstudy`] drives Monte Carlo replications of the whole pipeline.

pub mod block_engines;
pub mod combiner;
pub mod error;
pub mod inference;
pub mod kv;
pub mod linalg;
pub mod par;
pub mod partition;
pub mod pipeline;
pub mod simstudy;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
