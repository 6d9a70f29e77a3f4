//! Design-based difference-in-differences for general treatment types.
//!
//! The pipeline pairs panel units by optimal non-bipartite matching on a
//! distance that balances baseline covariates while separating treatment
//! changes, then estimates the mean within-pair ratio of outcome-change to
//! dose-change contrasts, with a design-based variance, normal-quantile
//! confidence intervals, and sign-flip randomization tests. A simulation
//! harness generates confounded two-period panels and compares the ratio
//! estimator with dichotomized and parametric alternatives.
//!
//! Modules:
//! - [`panel`] — panel types, CSV ingestion, validation.
//! - [`distance`] — pairwise edge costs (ratio and penalty forms).
//! - [`matching`] — exact minimum-cost perfect matching plus oracles.
//! - [`estimator`] — point estimates, variance, intervals, randomization
//!   tests, and potential-outcome oracles.
//! - [`sim`] — the data-generating process, comparators, bias and coverage
//!   studies.

pub mod distance;
pub mod error;
pub mod estimator;
pub mod matching;
pub mod normal;
pub mod panel;
pub mod sim;

pub use error::{Error, Result};
