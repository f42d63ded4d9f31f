//! Adaptive generative moment matching networks (AGMMNs).
//!
//! An AGMMN is a multilayer perceptron that maps standard-normal prior draws to
//! the unit hypercube and is trained by minimizing a mixture-RBF maximum mean
//! discrepancy whose bandwidths are re-estimated from pairwise-distance quantiles
//! of the training sample whenever the training loss plateaus.
//!
//! The crate also provides the surrounding machinery needed to use and assess
//! such generators:
//!
//! - [`copulas`]: Clayton, Gumbel, Gaussian and Student t copula samplers, and
//!   Rosenblatt inverses for quasi-random copula sampling.
//! - [`lowdisc`]: digitally shifted Sobol' sequences and quasi-random sampling
//!   from trained generators.
//! - [`estimators`]: expected shortfall, allocation and basket-call functionals,
//!   an MC/RQMC replication harness, convergence rates and the average
//!   Cramér-von Mises statistic.
//!
//! With the default `parallel` feature, kernel sums, sampling and replications
//! fan out over rayon. All reductions run over fixed-size chunks in index order,
//! so results are bitwise identical with and without the feature and for any
//! worker count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod copulas;
mod error;
pub mod estimators;
pub mod lowdisc;
pub mod mmd;
pub mod nn;
pub mod par;
pub mod seed;
pub mod special;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};

/// Row-major real matrix used throughout the crate (`n` samples by `d` columns).
pub type Matrix = ndarray::Array2<f64>;
