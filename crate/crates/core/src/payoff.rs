//! Path functionals of the stock price and the state reductions that let the
//! backward induction recombine lattice nodes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LatticeSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayoffKind {
    Call,
    Put,
    CappedCall,
    LookbackMax,
    Russian,
    /// Constant claim paying `level` at every time; `level = 0` is the null claim.
    Constant,
}

impl FromStr for PayoffKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "call" => Ok(Self::Call),
            "put" => Ok(Self::Put),
            "capped-call" | "capped_call" => Ok(Self::CappedCall),
            "lookback-max" | "lookback_max" | "lookback" => Ok(Self::LookbackMax),
            "russian" | "russian-style" => Ok(Self::Russian),
            "constant" | "zero" => Ok(Self::Constant),
            other => Err(Error::Config(format!("unknown payoff kind '{other}'"))),
        }
    }
}

impl fmt::Display for PayoffKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Call => "call",
            Self::Put => "put",
            Self::CappedCall => "capped-call",
            Self::LookbackMax => "lookback-max",
            Self::Russian => "russian",
            Self::Constant => "constant",
        };
        f.write_str(name)
    }
}

/// A cash-settled American claim `F(t, S)`.
///
/// Every built-in functional depends on the price path only through the
/// current price and its running maximum. `path_general` disables the
/// reduction and forces the solver onto the full binary tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    pub strike: f64,
    pub cap: f64,
    pub level: f64,
    pub path_general: bool,
}

impl PayoffSpec {
    fn base(kind: PayoffKind) -> Self {
        Self { kind, strike: 0.0, cap: 0.0, level: 0.0, path_general: false }
    }

    pub fn call(strike: f64) -> Self {
        Self { strike, ..Self::base(PayoffKind::Call) }
    }

    pub fn put(strike: f64) -> Self {
        Self { strike, ..Self::base(PayoffKind::Put) }
    }

    pub fn capped_call(strike: f64, cap: f64) -> Self {
        Self { strike, cap, ..Self::base(PayoffKind::CappedCall) }
    }

    pub fn lookback_max() -> Self {
        Self::base(PayoffKind::LookbackMax)
    }

    pub fn russian() -> Self {
        Self::base(PayoffKind::Russian)
    }

    pub fn constant(level: f64) -> Self {
        Self { level, ..Self::base(PayoffKind::Constant) }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn with_path_general(mut self, path_general: bool) -> Self {
        self.path_general = path_general;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        match self.kind {
            PayoffKind::Call | PayoffKind::Put if !(self.strike >= 0.0) => bad("strike must be >= 0"),
            PayoffKind::CappedCall if !(self.strike >= 0.0) => bad("strike must be >= 0"),
            PayoffKind::CappedCall if !(self.cap > 0.0) => bad("cap must be > 0"),
            PayoffKind::Constant if !(self.level >= 0.0 && self.level.is_finite()) => {
                bad("constant payoff level must be finite and >= 0")
            }
            _ => Ok(()),
        }
    }

    /// Payoff given the current price and the running maximum of the price path.
    pub fn value(&self, price: f64, running_max: f64) -> f64 {
        match self.kind {
            PayoffKind::Call => (price - self.strike).max(0.0),
            PayoffKind::Put => (self.strike - price).max(0.0),
            PayoffKind::CappedCall => (price - self.strike).max(0.0).min(self.cap),
            PayoffKind::LookbackMax => running_max,
            PayoffKind::Russian => (running_max - price).max(0.0),
            PayoffKind::Constant => self.level,
        }
    }

    /// Whether the payoff reads the running maximum.
    pub fn uses_running_max(&self) -> bool {
        matches!(self.kind, PayoffKind::LookbackMax | PayoffKind::Russian)
    }

    /// Growth constant `C` with `F(t, x) <= C sup |x|` on every path of the lattice.
    pub fn bound_c(&self, spec: &LatticeSpec) -> f64 {
        match self.kind {
            PayoffKind::Call | PayoffKind::CappedCall | PayoffKind::LookbackMax | PayoffKind::Russian => 1.0,
            PayoffKind::Put => self.strike / spec.min_price(),
            PayoffKind::Constant => self.level / spec.min_price(),
        }
    }
}

/// Payoff of the piecewise-constant lattice price path at step `k`.
/// `path[i]` is the sign (+1 or -1) of move `i + 1`.
pub fn evaluate(payoff: &PayoffSpec, spec: &LatticeSpec, k: usize, path: &[i8]) -> Result<f64> {
    if path.len() != k {
        return Err(Error::LengthMismatch { expected: k, got: path.len() });
    }
    if k > spec.n {
        return Err(Error::IndexOutOfRange { k, up_count: 0, n: spec.n });
    }
    let mut level = 0i64;
    let mut max_level = 0i64;
    for &z in path {
        level += if z > 0 { 1 } else { -1 };
        max_level = max_level.max(level);
    }
    Ok(payoff.value(spec.price_at_level(level), spec.price_at_level(max_level)))
}

/// Largest payoff over every node of the lattice.
pub fn max_payoff(payoff: &PayoffSpec, spec: &LatticeSpec) -> f64 {
    let mut best = 0.0f64;
    for k in 0..=spec.n as i64 {
        for level in (-k..=k).step_by(2) {
            let price = spec.price_at_level(level);
            // running max ranges over [max(level, 0), up to (k + level) / 2]
            let lo = level.max(0);
            let hi = (k + level) / 2;
            for m in lo..=hi {
                best = best.max(payoff.value(price, spec.price_at_level(m)));
            }
        }
    }
    best
}

/// Summary of a lattice path sufficient for the payoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeState {
    /// `up_count - down_count`.
    pub level: i32,
    /// Running maximum of `level`; zero when the reduction does not track it.
    pub max_level: i32,
    /// Bit `i` set when move `i + 1` was up; zero unless the full tree is used.
    pub path: u64,
}

impl NodeState {
    pub fn up_count(&self, k: usize) -> usize {
        ((k as i64 + self.level as i64) / 2) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// State is the price level alone.
    Level,
    /// State is (price level, running-max level).
    LevelMax,
    /// No reduction: one node per path prefix.
    FullPath,
}

/// State machine that advances a [`NodeState`] along the lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovAdapter {
    pub payoff: PayoffSpec,
    pub reduction: Reduction,
}

impl MarkovAdapter {
    pub fn full_tree(payoff: &PayoffSpec) -> Self {
        Self { payoff: *payoff, reduction: Reduction::FullPath }
    }

    pub fn initial(&self) -> NodeState {
        NodeState { level: 0, max_level: 0, path: 0 }
    }

    /// Advance from step `k` to `k + 1`.
    pub fn advance(&self, state: NodeState, k: usize, up: bool) -> NodeState {
        let level = state.level + if up { 1 } else { -1 };
        match self.reduction {
            Reduction::Level => NodeState { level, max_level: 0, path: 0 },
            Reduction::LevelMax => NodeState { level, max_level: state.max_level.max(level), path: 0 },
            Reduction::FullPath => NodeState {
                level,
                max_level: state.max_level.max(level),
                path: if up { state.path | (1u64 << k) } else { state.path },
            },
        }
    }

    pub fn payoff_of(&self, state: NodeState, spec: &LatticeSpec) -> f64 {
        let price = spec.price_at_level(state.level as i64);
        let running_max = if self.payoff.uses_running_max() {
            spec.price_at_level(state.max_level as i64)
        } else {
            price
        };
        self.payoff.value(price, running_max)
    }
}

/// The recombining reduction for a payoff, or `None` when the payoff is
/// declared path-general.
pub fn markov_adapter(payoff: &PayoffSpec) -> Option<MarkovAdapter> {
    if payoff.path_general {
        return None;
    }
    let reduction = if payoff.uses_running_max() { Reduction::LevelMax } else { Reduction::Level };
    Some(MarkovAdapter { payoff: *payoff, reduction })
}
