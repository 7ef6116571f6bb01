//! Pair-based training of treatment-effect networks.
//!
//! Covers two-headed and binned-treatment networks, neighbor pairing in an
//! embedding space, pair, factual and matching objectives, synthetic data with
//! known potential outcomes, evaluation statistics, and exact checks of the
//! residual-risk identities on finite supports.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pairing;
pub mod seed;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
