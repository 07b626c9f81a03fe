//! QComp: Gaussian data completion on top of any pre-existing
//! structure-based property model.
//!
//! A multivariate Gaussian over per-compound assay deviations is calibrated
//! against dense base-model predictions (`mu = f B + b`, covariance
//! parameterized by its Cholesky factor), fitted by gradient descent on the
//! negative log marginal likelihood of the observed entries, and then used
//! to fill missing assay values conditioned on observed ones, to quantify
//! the certainty gained from each observation, and to plan greedy
//! experiment sequences.

pub mod completion;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod model;
pub mod planner;
pub mod schema;
pub mod train;

pub use error::{QcompError, Result};
