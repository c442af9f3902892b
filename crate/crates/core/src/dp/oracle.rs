//! Exhaustive search over per-node transfers for very short lattices.
//!
//! Works on exact wealth states with no value-function grid. Each node tries
//! a uniform grid of transfers over its admissible interval together with
//! the interval endpoints and the kinks `w = 0`, `w = -v`, then zooms in on
//! the best transfer found. In the last step the objective is piecewise
//! linear in `w`, so the points where a successor wealth hits its payoff are
//! added and that step is solved exactly.

use serde::{Deserialize, Serialize};

use crate::dp::strategy::{evaluate_strategy_risk, TransferTree};
use crate::error::{Error, Result};
use crate::friction::{admissible_interval, wealth_step, TransferInterval};
use crate::model::{Frictions, LatticeSpec};
use crate::payoff::{MarkovAdapter, NodeState, PayoffSpec};

pub const ORACLE_MAX_STEPS: usize = 3;
/// Zoom rounds after the uniform scan; each shrinks the spacing fourfold.
pub const ORACLE_REFINE_ROUNDS: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleResult {
    pub risk: f64,
    pub w_grid_size: usize,
    /// The minimizing strategy.
    pub tree: TransferTree,
}

struct Search<'a> {
    spec: &'a LatticeSpec,
    fr: &'a Frictions,
    adapter: MarkovAdapter,
    grid: usize,
    rounds: usize,
}

impl Search<'_> {
    fn candidates(&self, k: usize, u: f64, v: f64, state: NodeState) -> (Vec<f64>, TransferInterval) {
        let iv = admissible_interval(u.max(0.0), v, self.spec.a_n, self.spec.b_n, self.fr)
            .expect("lattice rates are valid");
        let mut out = Vec::with_capacity(self.grid + 8);
        out.push(iv.clamp(-v));
        if iv.contains(0.0) {
            out.push(0.0);
        }
        if iv.width() > 0.0 {
            let step = iv.width() / self.grid as f64;
            out.extend((0..=self.grid).map(|i| iv.lo + step * i as f64));
            out.push(iv.hi);
        } else {
            out.push(iv.lo);
        }
        if k + 1 == self.spec.n {
            for up in [true, false] {
                let phi = self.adapter.payoff_of(self.adapter.advance(state, k, up), self.spec);
                let rho = self.spec.gross_return(up);
                let mut kinks = vec![iv.lo, iv.hi];
                for kink in [0.0, -v] {
                    if iv.contains(kink) {
                        kinks.push(kink);
                    }
                }
                kinks.sort_by(f64::total_cmp);
                for seg in kinks.windows(2) {
                    let (g0, g1) = (
                        wealth_step(u, v, seg[0], rho, self.fr),
                        wealth_step(u, v, seg[1], rho, self.fr),
                    );
                    if (g0 - phi) * (g1 - phi) < 0.0 {
                        out.push(seg[0] + (phi - g0) * (seg[1] - seg[0]) / (g1 - g0));
                    }
                }
            }
        }
        (out, iv)
    }

    fn children(&self, k: usize, u: f64, v: f64, w: f64, state: NodeState) -> [(f64, f64, NodeState); 2] {
        [true, false].map(|up| {
            let rho = self.spec.gross_return(up);
            (
                wealth_step(u, v, w, rho, self.fr).max(0.0),
                (v + w) * rho,
                self.adapter.advance(state, k, up),
            )
        })
    }

    /// Minimal continuation value at a node and the transfer achieving it.
    fn best_transfer(&self, k: usize, u: f64, v: f64, state: NodeState) -> (f64, f64) {
        let p = self.spec.p_n;
        let mut best = (f64::INFINITY, -v);
        let try_w = |w: f64, best: &mut (f64, f64)| {
            let [up, down] = self.children(k, u, v, w, state);
            let value = p * self.value(k + 1, up.0, up.1, up.2) + (1.0 - p) * self.value(k + 1, down.0, down.1, down.2);
            if !best.0.is_finite() {
                *best = (value, w);
                return;
            }
            let tol = 1e-12 * (1.0 + best.0.abs());
            if value < best.0 - tol || (value <= best.0 + tol && (v + w).abs() < (v + best.1).abs()) {
                *best = (value.min(best.0), w);
            }
        };
        let (candidates, iv) = self.candidates(k, u, v, state);
        for w in candidates {
            try_w(w, &mut best);
        }
        let mut h = iv.width() / self.grid as f64;
        for _ in 0..self.rounds {
            if h <= 0.0 {
                break;
            }
            let centre = best.1;
            for j in -4i32..=4 {
                let w = centre + h * j as f64 / 4.0;
                if j != 0 && iv.contains(w) {
                    try_w(w, &mut best);
                }
            }
            h /= 4.0;
        }
        best
    }

    fn value(&self, k: usize, u: f64, v: f64, state: NodeState) -> f64 {
        let shortfall = (self.adapter.payoff_of(state, self.spec) - u).max(0.0);
        if k == self.spec.n {
            return shortfall;
        }
        shortfall.max(self.best_transfer(k, u, v, state).0)
    }

    fn fill_tree(&self, tree: &mut TransferTree, k: usize, path: usize, u: f64, v: f64, state: NodeState) {
        if k == self.spec.n {
            return;
        }
        let (_, w) = self.best_transfer(k, u, v, state);
        tree.transfers[k][path] = w;
        let [up, down] = self.children(k, u, v, w, state);
        self.fill_tree(tree, k + 1, path | (1 << k), up.0, up.1, up.2);
        self.fill_tree(tree, k + 1, path, down.0, down.1, down.2);
    }
}

/// Minimal shortfall risk by exhaustive transfer search, for `n <= 3`.
pub fn oracle_bruteforce(
    spec: &LatticeSpec,
    payoff: &PayoffSpec,
    fr: &Frictions,
    x: f64,
    w_grid_size: usize,
) -> Result<OracleResult> {
    oracle_bruteforce_with(spec, payoff, fr, x, w_grid_size, ORACLE_REFINE_ROUNDS)
}

/// `oracle_bruteforce` with an explicit number of zoom rounds. Without zoom
/// rounds, grids whose sizes divide each other give nested candidate sets.
pub fn oracle_bruteforce_with(
    spec: &LatticeSpec,
    payoff: &PayoffSpec,
    fr: &Frictions,
    x: f64,
    w_grid_size: usize,
    refine_rounds: usize,
) -> Result<OracleResult> {
    if spec.n > ORACLE_MAX_STEPS {
        return Err(Error::InvalidParameter(format!(
            "brute-force oracle supports n <= {ORACLE_MAX_STEPS}, got {}",
            spec.n
        )));
    }
    if w_grid_size == 0 {
        return Err(Error::InvalidParameter("w grid size must be >= 1".into()));
    }
    fr.validate()?;
    payoff.validate()?;
    let search = Search { spec, fr, adapter: MarkovAdapter::full_tree(payoff), grid: w_grid_size, rounds: refine_rounds };
    let root = search.adapter.initial();
    let risk = search.value(0, x, 0.0, root);
    let mut tree = TransferTree::zeros(spec.n);
    search.fill_tree(&mut tree, 0, 0, x, 0.0, root);
    Ok(OracleResult { risk, w_grid_size, tree })
}

/// Re-evaluates the oracle's strategy through the generic Snell evaluation.
pub fn oracle_strategy_risk(
    result: &OracleResult,
    spec: &LatticeSpec,
    payoff: &PayoffSpec,
    fr: &Frictions,
    x: f64,
) -> Result<f64> {
    evaluate_strategy_risk(&result.tree, spec, payoff, fr, x)
}
