//! Minimal shortfall risk of cash-settled American options under
//! proportional transaction costs.
//!
//! The binomial lattice problem is solved by backward induction over the
//! portfolio state (liquidation wealth, position value); optimal binomial
//! strategies are carried into a simulated Black-Scholes market through
//! first-exit times of a Brownian driver.

// `!(x >= 0.0)` rejects NaN along with negatives
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dp;
pub mod embed;
pub mod error;
pub mod friction;
pub mod model;
pub mod payoff;

pub use error::{Error, Result};
pub use model::{calibrate, stock_price, Frictions, LatticeSpec, MarketParams};
pub use payoff::{evaluate, markov_adapter, PayoffKind, PayoffSpec};
