//! Series approximations of the value function, optimal strategy and implied
//! Sharpe ratio for the finite-horizon Merton problem under
//! local-stochastic volatility.

pub mod approx;
pub mod config;
pub mod error;
pub mod exact;
pub mod mc;
pub mod merton;
pub mod model;
pub mod opalg;
pub mod poly;
pub mod runner;

pub use error::{Error, Result};
