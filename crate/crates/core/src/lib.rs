//! Robust minimum-variance hedging from intraday realized measures.
//!
//! The crate covers the full chain from raw intraday bars to tested hedge
//! decisions:
//!
//! - [`market_data`]: bar ingestion, interval returns, realized variance and
//!   covariance, daily close-to-close returns, pair correlation;
//! - [`ts_models`]: AR(p) and HAR fitting, recursive multi-step forecasts with
//!   log-bias correction, moving-average impulse weights, closed-form and
//!   empirical forecast-error bands, ADF screening;
//! - [`robust_hedge`]: the closed-form min-max hedge ratio under box
//!   uncertainty on variance forecasts, plus a brute-force grid oracle;
//! - [`backtest`]: hedged-portfolio construction with transaction costs,
//!   effectiveness and performance/risk metrics;
//! - [`inference`]: random-block and maximum-entropy bootstrap tests for
//!   paired metric differences.

pub mod backtest;
pub mod inference;
pub mod market_data;
mod ols;
pub mod robust_hedge;
pub mod ts_models;
