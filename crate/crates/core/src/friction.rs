//! Transaction-cost algebra: the one-step liquidation-wealth map, the
//! admissible transfer interval and the wealth recursions built on them.
//!
//! A portfolio state is `(u, v)`: liquidation wealth `u` and position value
//! `v = gamma * S`. A transfer `w` changes the position by `w` units of stock
//! value at the pre-move price; `rho` is the gross return of the next move.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Frictions, LatticeSpec};

/// Slack used when checking the no-bankruptcy condition.
pub fn admissibility_slack(u: f64) -> f64 {
    1e-9 * (1.0 + u.abs())
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}

/// Liquidation wealth after transferring `w` and a move with gross return `rho`.
///
/// Terms are grouped so that a full liquidation (`w = -v`) returns `u` exactly.
#[inline]
pub fn wealth_step(u: f64, v: f64, w: f64, rho: f64, fr: &Frictions) -> f64 {
    let y = v + w;
    u + (1.0 - fr.mu) * (neg(w) - pos(v))
        + (1.0 + fr.lambda) * (neg(v) - pos(w))
        + rho * ((1.0 - fr.mu) * pos(y) - (1.0 + fr.lambda) * neg(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferInterval {
    pub lo: f64,
    pub hi: f64,
}

impl TransferInterval {
    pub fn contains(&self, w: f64) -> bool {
        w >= self.lo && w <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, w: f64) -> f64 {
        w.clamp(self.lo, self.hi)
    }
}

/// Transfers keeping the liquidation wealth non-negative after either move
/// `1 + b` or `1 - a`.
pub fn admissible_interval(u: f64, v: f64, a: f64, b: f64, fr: &Frictions) -> Result<TransferInterval> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidParameter(format!("a must lie in (0, 1), got {a}")));
    }
    if !(b > 0.0) {
        return Err(Error::InvalidParameter(format!("b must be > 0, got {b}")));
    }
    Ok(interval_unchecked(u, v, a, b, fr))
}

#[inline]
pub(crate) fn interval_unchecked(u: f64, v: f64, a: f64, b: f64, fr: &Frictions) -> TransferInterval {
    let buy = 1.0 + fr.lambda;
    let sell = 1.0 - fr.mu;
    // Cost of a unit long position that drops by `a`, and a unit short that rises by `b`.
    let long_loss = buy - sell * (1.0 - a);
    let short_loss = buy * (1.0 + b) - sell;
    let u = u.max(0.0);
    if v >= 0.0 {
        let slack = u - a * v * sell;
        let hi = if slack >= 0.0 { slack / long_loss } else { slack / (a * sell) };
        let lo = -v - u / short_loss;
        // both ends are -v at u = 0; keep rounding from inverting them
        TransferInterval { lo, hi: hi.max(lo) }
    } else {
        let slack = u + b * buy * v;
        let lo = if slack >= 0.0 { -slack / short_loss } else { -slack / (b * buy) };
        let hi = -v + u / long_loss;
        TransferInterval { lo: lo.min(hi), hi }
    }
}

/// Whether `w` keeps both successor wealths above `-admissibility_slack(u)`.
pub fn is_admissible(u: f64, v: f64, w: f64, a: f64, b: f64, fr: &Frictions) -> bool {
    let slack = admissibility_slack(u);
    wealth_step(u, v, w, 1.0 + b, fr) >= -slack && wealth_step(u, v, w, 1.0 - a, fr) >= -slack
}

/// Wealth, position values and transfers along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthPath {
    /// Liquidation wealth `V(0..=n)`.
    pub wealth: Vec<f64>,
    /// Position value before the transfer, `v_k = gamma(k) S(k)`, for `k = 0..=n`.
    pub positions: Vec<f64>,
    pub transfers: Vec<f64>,
    /// First step at which the wealth went negative.
    pub first_violation: Option<usize>,
}

fn wealth_recursion(x: f64, transfers: &[f64], returns: impl Iterator<Item = f64>, fr: &Frictions) -> WealthPath {
    let mut wealth = Vec::with_capacity(transfers.len() + 1);
    let mut positions = Vec::with_capacity(transfers.len() + 1);
    wealth.push(x);
    positions.push(0.0);
    let mut first_violation = None;
    for (k, (&w, rho)) in transfers.iter().zip(returns).enumerate() {
        let u = wealth[k];
        let v = positions[k];
        let next = wealth_step(u, v, w, rho, fr);
        if next < 0.0 && first_violation.is_none() {
            first_violation = Some(k + 1);
        }
        wealth.push(next);
        positions.push((v + w) * rho);
    }
    WealthPath { wealth, positions, transfers: transfers.to_vec(), first_violation }
}

/// Wealth along the lattice path `signs` under the given transfers. Bankruptcy
/// is reported in `first_violation`, not rejected.
pub fn discrete_wealth_path(
    x: f64,
    transfers: &[f64],
    signs: &[i8],
    spec: &LatticeSpec,
    fr: &Frictions,
) -> Result<WealthPath> {
    if transfers.len() != signs.len() {
        return Err(Error::LengthMismatch { expected: signs.len(), got: transfers.len() });
    }
    let returns = signs.iter().map(|&z| spec.gross_return(z > 0));
    Ok(wealth_recursion(x, transfers, returns, fr))
}

/// Wealth at the crossing times, driven by the observed prices `S(theta_0..=theta_n)`.
pub fn crossing_wealth_path(
    x: f64,
    transfers: &[f64],
    crossing_prices: &[f64],
    spec: &LatticeSpec,
    fr: &Frictions,
) -> Result<WealthPath> {
    if crossing_prices.len() != transfers.len() + 1 {
        return Err(Error::LengthMismatch { expected: transfers.len() + 1, got: crossing_prices.len() });
    }
    let up = 1.0 + spec.b_n;
    let down = 1.0 - spec.a_n;
    let mut returns = Vec::with_capacity(transfers.len());
    for (step, pair) in crossing_prices.windows(2).enumerate() {
        let ratio = pair[1] / pair[0];
        let near = |f: f64| ((ratio - f) / f).abs() <= 1e-9;
        if !(near(up) || near(down)) {
            return Err(Error::InconsistentPrices { step, ratio });
        }
        returns.push(ratio);
    }
    Ok(wealth_recursion(x, transfers, returns.into_iter(), fr))
}
