//! Dynamic volatility-connectedness networks for currencies, and the
//! trading/pricing machinery built on top of them.
//!
//! The library turns panels of FX option quotes and spot/forward exchange
//! rates into:
//! - option-implied variances per currency and day ([`implied_variance`]),
//! - a time-varying VAR estimated by kernel-weighted quasi-Bayesian updates
//!   ([`tvp_var`]),
//! - horizon-band directed networks from frequency-domain variance
//!   decompositions ([`connectedness`]),
//! - network-sorted currency portfolios with benchmark strategies and
//!   transaction-cost accounting ([`strategy`]),
//! - linear-SDF GMM pricing tests with HJ distances and PCA diagnostics
//!   ([`asset_pricing`]).
//!
//! [`pipeline`] wires the stages into a deterministic, cached, seeded run;
//! [`synthetic`] generates loader-compatible data with planted structure so
//! the whole pipeline can be exercised without proprietary feeds.

pub mod asset_pricing;
pub mod connectedness;
pub mod econometrics;
pub mod error;
pub mod implied_variance;
pub mod market_data;
pub mod panel;
pub mod pipeline;
pub mod strategy;
pub mod synthetic;
pub mod tvp_var;

pub use error::{Error, Result};
