//! Moment-based approximations to permutation tests for gene-set statistics.
//!
//! The linear statistic `T = Σ w_g β_g` and the quadratic statistic
//! `C = Σ w_g β_g²` have exact permutation moments that are cheap to compute.
//! Matching a rescaled beta (or normal) distribution to the moments of `T`
//! and a scaled χ² to those of `C` gives continuous p-values that track
//! Monte-Carlo permutation p-values closely at a small fraction of the cost.
//!
//! Modules:
//! - [`dataset`]: expression matrix, phenotype, preprocessing, gene-set resolution
//! - [`moments`]: exact permutation moments and the pseudo-gene reduction
//! - [`refdist`]: reference-distribution fits and p-values
//! - [`special`]: incomplete beta/gamma and normal functions
//! - [`resampling`]: permutation and rotation oracles
//! - [`gsio`]: GMT / TSV readers and the results writer

pub mod dataset;
pub mod error;
pub mod gsio;
pub mod moments;
pub mod refdist;
pub mod resampling;
pub mod special;

pub use error::{Error, Result};
