//! Estimation and optimization of utility-based shortfall risk and
//! optimized certainty equivalents from i.i.d. samples.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod experiments;
pub mod gradients;
pub mod optimization;
pub mod risk_functions;
pub mod scenarios;

pub use error::{Result, RiskError};
