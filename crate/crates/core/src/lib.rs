//! Size-dependent CAPM market model.
//!
//! Portfolios are described by their relative size `C_k = ln(S_0 / S_k)`
//! against a benchmark. Excess return, market exposure and idiosyncratic
//! risk are functions of `C_k`; the crate estimates those functions from
//! decile return panels, simulates the resulting SDE system, checks the
//! stability condition and computes stationary densities and capital
//! distribution curves.

// `!(x > 0.0)` is used on purpose so that NaN takes the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod estimate;
pub mod ingest;
pub mod model;
pub mod returns;
pub mod simulate;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{CoefficientSpec, MarketModel, MarketModelParams};
