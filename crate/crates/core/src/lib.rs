//! Covariance forecasting and minimum-variance backtesting for mixed
//! stock/crypto portfolios.

pub mod allocator;
pub mod backtest;
pub mod cholpipe;
pub mod estimators;
pub mod forecasters;
pub mod grid;
pub mod market_data;
pub mod metrics;
pub mod optimizer;
pub mod synth;
