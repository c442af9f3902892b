//! Market parameters and the calibrated n-step binomial lattice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Black-Scholes market with zero interest rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub s0: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub maturity: f64,
}

impl MarketParams {
    pub fn new(s0: f64, sigma: f64, kappa: f64, maturity: f64) -> Result<Self> {
        let params = Self { s0, sigma, kappa, maturity };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(Error::InvalidParameter(format!("s0 must be > 0, got {}", self.s0)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !self.kappa.is_finite() {
            return Err(Error::InvalidParameter("kappa must be finite".into()));
        }
        if !(self.maturity.is_finite() && self.maturity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "maturity must be > 0, got {}",
                self.maturity
            )));
        }
        Ok(())
    }
}

impl Default for MarketParams {
    fn default() -> Self {
        Self { s0: 1.0, sigma: 0.2, kappa: 0.0, maturity: 1.0 }
    }
}

/// Proportional transaction cost rates: purchases pay `(1 + lambda)`, sales
/// receive `(1 - mu)` per unit of stock value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frictions {
    pub lambda: f64,
    pub mu: f64,
}

impl Frictions {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        let fr = Self { lambda, mu };
        fr.validate()?;
        Ok(fr)
    }

    pub fn zero() -> Self {
        Self { lambda: 0.0, mu: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.mu.is_finite() && (0.0..1.0).contains(&self.mu)) {
            return Err(Error::InvalidParameter(format!(
                "mu must lie in [0, 1), got {}",
                self.mu
            )));
        }
        Ok(())
    }
}

/// Calibrated quantities of the n-step lattice. Prices move by the factors
/// `1 + b_n = e^delta` and `1 - a_n = e^-delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub n: usize,
    pub s0: f64,
    pub maturity: f64,
    pub sigma: f64,
    pub delta: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub p_n: f64,
}

pub fn calibrate(params: &MarketParams, n: usize) -> Result<LatticeSpec> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("step count n must be >= 1".into()));
    }
    let root = (params.maturity / n as f64).sqrt();
    let delta = params.sigma * root;
    let a_n = -(-delta).exp_m1();
    let b_n = delta.exp_m1();
    let p_n = 1.0 / (((params.sigma - 2.0 * params.kappa / params.sigma) * root).exp() + 1.0);
    if !(p_n > 0.0 && p_n < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "up probability degenerates to {p_n}; drift too large for this step size"
        )));
    }
    Ok(LatticeSpec {
        n,
        s0: params.s0,
        maturity: params.maturity,
        sigma: params.sigma,
        delta,
        a_n,
        b_n,
        p_n,
    })
}

impl LatticeSpec {
    /// Gross return of a single move: `1 + b_n` for an up move, `1 - a_n` for a down move.
    pub fn gross_return(&self, up: bool) -> f64 {
        if up {
            1.0 + self.b_n
        } else {
            1.0 - self.a_n
        }
    }

    /// Time of step `k` in years.
    pub fn time(&self, k: usize) -> f64 {
        self.maturity * k as f64 / self.n as f64
    }

    pub fn price_at_level(&self, level: i64) -> f64 {
        self.s0 * (self.delta * level as f64).exp()
    }

    /// Smallest price the lattice can reach, `S0 (1 - a_n)^n`.
    pub fn min_price(&self) -> f64 {
        self.price_at_level(-(self.n as i64))
    }
}

/// Lattice price after `k` steps of which `up_count` were up moves.
pub fn stock_price(spec: &LatticeSpec, k: usize, up_count: usize) -> Result<f64> {
    if up_count > k || k > spec.n {
        return Err(Error::IndexOutOfRange { k, up_count, n: spec.n });
    }
    Ok(spec.price_at_level(2 * up_count as i64 - k as i64))
}
