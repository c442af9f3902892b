//! Fixed trading strategies on the binary tree, their risk, and the optimal
//! strategy read off a [`Solution`].

use serde::{Deserialize, Serialize};

use crate::dp::grid::GridSpec;
use crate::dp::solve::{escape_tol, solve, SolveDiagnostics, SolveOptions, Solution};
use crate::error::{Error, Result};
use crate::friction::wealth_step;
use crate::model::{Frictions, LatticeSpec};
use crate::payoff::{MarkovAdapter, PayoffSpec};

/// Transfers (in stock value) on every node of the binary tree up to step `n - 1`.
///
/// `transfers[k][path]` is the transfer made at step `k` after the path whose
/// bit `i` is set when move `i + 1` went up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTree {
    pub n: usize,
    pub transfers: Vec<Vec<f64>>,
}

impl TransferTree {
    pub fn zeros(n: usize) -> Self {
        Self { n, transfers: (0..n).map(|k| vec![0.0; 1 << k]).collect() }
    }

    pub fn get(&self, k: usize, path: usize) -> Result<f64> {
        self.transfers
            .get(k)
            .and_then(|row| row.get(path))
            .copied()
            .ok_or(Error::MissingNode { k, node: path })
    }

    /// Transfers met along a sign sequence.
    pub fn along(&self, signs: &[i8]) -> Result<Vec<f64>> {
        let mut path = 0usize;
        let mut out = Vec::with_capacity(signs.len());
        for (k, &z) in signs.iter().enumerate() {
            out.push(self.get(k, path)?);
            if z > 0 {
                path |= 1 << k;
            }
        }
        Ok(out)
    }
}

/// `max_tau E[(Y(tau) - V(tau))^+]` of a fixed strategy, by backward Snell recursion.
pub fn evaluate_strategy_risk(
    tree: &TransferTree,
    spec: &LatticeSpec,
    payoff: &PayoffSpec,
    fr: &Frictions,
    x: f64,
) -> Result<f64> {
    let n = spec.n;
    if tree.transfers.len() < n {
        return Err(Error::MissingNode { k: tree.transfers.len(), node: 0 });
    }
    for k in 0..n {
        if tree.transfers[k].len() < 1 << k {
            return Err(Error::MissingNode { k, node: tree.transfers[k].len() });
        }
    }
    let adapter = MarkovAdapter::full_tree(payoff);
    // forward: wealth, position and payoff on every path prefix
    let mut shortfalls: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut wealth = vec![x];
    let mut positions = vec![0.0];
    let mut states = vec![adapter.initial()];
    for k in 0..=n {
        shortfalls.push(
            states
                .iter()
                .zip(&wealth)
                .map(|(s, u)| (adapter.payoff_of(*s, spec) - u).max(0.0))
                .collect(),
        );
        if k == n {
            break;
        }
        let size = 1usize << (k + 1);
        let mut next_w = vec![0.0; size];
        let mut next_p = vec![0.0; size];
        let mut next_s = vec![adapter.initial(); size];
        for path in 0..(1usize << k) {
            let w = tree.transfers[k][path];
            for up in [false, true] {
                let rho = spec.gross_return(up);
                let child = if up { path | (1 << k) } else { path };
                next_w[child] = wealth_step(wealth[path], positions[path], w, rho, fr);
                next_p[child] = (positions[path] + w) * rho;
                next_s[child] = adapter.advance(states[path], k, up);
            }
        }
        wealth = next_w;
        positions = next_p;
        states = next_s;
    }
    let p = spec.p_n;
    let mut snell = shortfalls[n].clone();
    for k in (0..n).rev() {
        snell = (0..(1usize << k))
            .map(|path| {
                let cont = p * snell[path | (1 << k)] + (1.0 - p) * snell[path];
                shortfalls[k][path].max(cont)
            })
            .collect();
    }
    Ok(snell[0])
}

/// The optimal strategy followed along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedPath {
    pub signs: Vec<i8>,
    pub transfers: Vec<f64>,
    pub wealth: Vec<f64>,
    /// Position value before the transfer at each step.
    pub positions: Vec<f64>,
    /// Share counts `gamma(1..=len)` held after each transfer.
    pub shares: Vec<f64>,
    pub prices: Vec<f64>,
}

fn check_escape(sol: &Solution, k: usize, u: f64, v: f64) -> Result<()> {
    let tol = escape_tol(&sol.grid);
    if v > sol.grid.v_max + tol || v < sol.grid.v_min - tol {
        return Err(Error::GridEscape { k, u, v });
    }
    Ok(())
}

/// Walks the lattice along `signs` from capital `x`, choosing at each node the
/// transfer that minimizes the successor value at the realized state.
pub fn extract_strategy(sol: &Solution, x: f64, signs: &[i8]) -> Result<ExtractedPath> {
    let spec = &sol.spec;
    if signs.len() > spec.n {
        return Err(Error::LengthMismatch { expected: spec.n, got: signs.len() });
    }
    let mut node = 0usize;
    let mut level = 0i64;
    let mut u = x;
    let mut v = 0.0;
    let mut gamma = 0.0;
    let mut out = ExtractedPath {
        signs: signs.to_vec(),
        transfers: Vec::with_capacity(signs.len()),
        wealth: vec![x],
        positions: vec![0.0],
        shares: Vec::with_capacity(signs.len()),
        prices: vec![spec.s0],
    };
    for (k, &z) in signs.iter().enumerate() {
        let price = spec.price_at_level(level);
        let w = sol.optimal_transfer(k, node, u, v).w;
        let up = z > 0;
        let rho = spec.gross_return(up);
        gamma += w / price;
        u = wealth_step(u, v, w, rho, &sol.frictions);
        v = (v + w) * rho;
        if k + 1 < spec.n {
            check_escape(sol, k + 1, u, v)?;
        }
        let layer = &sol.layers[k];
        node = if up { layer.up_child[node] } else { layer.down_child[node] };
        level += if up { 1 } else { -1 };
        out.transfers.push(w);
        out.shares.push(gamma);
        out.wealth.push(u);
        out.positions.push(v);
        out.prices.push(spec.price_at_level(level));
    }
    Ok(out)
}

/// Optimal transfers on the full binary tree from capital `x`.
pub fn extract_tree(sol: &Solution, x: f64) -> Result<TransferTree> {
    let spec = &sol.spec;
    let n = spec.n;
    let mut tree = TransferTree::zeros(n);
    // (node, wealth, position) per path prefix
    let mut frontier = vec![(0usize, x, 0.0f64)];
    for k in 0..n {
        let mut next = vec![(0usize, 0.0, 0.0); 1 << (k + 1)];
        for (path, &(node, u, v)) in frontier.iter().enumerate() {
            let w = sol.optimal_transfer(k, node, u, v).w;
            tree.transfers[k][path] = w;
            let layer = &sol.layers[k];
            for up in [false, true] {
                let rho = spec.gross_return(up);
                let nu = wealth_step(u, v, w, rho, &sol.frictions);
                let nv = (v + w) * rho;
                if k + 1 < n {
                    check_escape(sol, k + 1, nu, nv)?;
                }
                let child = if up { layer.up_child[node] } else { layer.down_child[node] };
                next[if up { path | (1 << k) } else { path }] = (child, nu, nv);
            }
        }
        frontier = next;
    }
    Ok(tree)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskReport {
    pub risk: f64,
    pub x: f64,
    pub frictions: Frictions,
    pub lattice: LatticeSpec,
    pub payoff: PayoffSpec,
    pub grid: GridSpec,
    pub grid_points: (usize, usize),
    pub diagnostics: SolveDiagnostics,
}

/// Minimal shortfall risk `R_n(x) = J_0(x, 0)`. The capital is inserted as a
/// u knot so the read is a grid sample.
pub fn shortfall_risk(
    spec: &LatticeSpec,
    payoff: &PayoffSpec,
    fr: &Frictions,
    x: f64,
    grid: &GridSpec,
) -> Result<RiskReport> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::InvalidParameter(format!("capital must be >= 0, got {x}")));
    }
    let grid = grid.clone().with_extra_u([x]);
    let sol = solve(spec, payoff, fr, &grid, SolveOptions::default())?;
    Ok(report_from(&sol, x))
}

pub fn report_from(sol: &Solution, x: f64) -> RiskReport {
    RiskReport {
        risk: sol.risk_at(x),
        x,
        frictions: sol.frictions,
        lattice: sol.spec,
        payoff: sol.payoff,
        grid: sol.grid.clone(),
        grid_points: sol.axes.first().and_then(|l| l.first()).map_or((0, 0), |a| (a.n_u(), a.n_v())),
        diagnostics: sol.diagnostics.clone(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskCurve {
    pub points: Vec<(f64, f64)>,
    /// Capitals where the sampled slope changes noticeably.
    pub breakpoints: Vec<f64>,
    /// Largest absolute slope between neighbouring samples.
    pub max_slope: f64,
}

/// `x -> R_n(x)` from a single solve.
pub fn risk_curve(
    spec: &LatticeSpec,
    payoff: &PayoffSpec,
    fr: &Frictions,
    x_values: &[f64],
    grid: &GridSpec,
) -> Result<RiskCurve> {
    if x_values.windows(2).any(|w| w[1] < w[0]) || x_values.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidParameter("x values must be sorted and >= 0".into()));
    }
    let sol = solve(spec, payoff, fr, grid, SolveOptions::default())?;
    Ok(curve_from(&sol, x_values))
}

pub fn curve_from(sol: &Solution, x_values: &[f64]) -> RiskCurve {
    let points: Vec<(f64, f64)> = x_values.iter().map(|&x| (x, sol.risk_at(x))).collect();
    let slopes: Vec<f64> = points
        .windows(2)
        .map(|w| if w[1].0 > w[0].0 { (w[1].1 - w[0].1) / (w[1].0 - w[0].0) } else { 0.0 })
        .collect();
    let max_slope = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let threshold = 1e-3 * (1.0 + max_slope);
    let breakpoints = slopes
        .windows(2)
        .enumerate()
        .filter(|(_, s)| (s[1] - s[0]).abs() > threshold)
        .map(|(i, _)| points[i + 1].0)
        .collect();
    RiskCurve { points, breakpoints, max_slope }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::solve::snell_value;
    use crate::friction::discrete_wealth_path;
    use crate::model::{calibrate, MarketParams};
    use crate::payoff::evaluate;

    fn lattice(n: usize) -> LatticeSpec {
        calibrate(&MarketParams::new(1.0, 0.2, 0.0, 1.0).unwrap(), n).unwrap()
    }

    fn paths(n: usize) -> impl Iterator<Item = Vec<i8>> {
        (0..1usize << n).map(move |bits| (0..n).map(|k| if bits >> k & 1 == 1 { 1 } else { -1 }).collect())
    }

    #[test]
    fn transfers_along_a_path() {
        let mut tree = TransferTree::zeros(3);
        tree.transfers[1][1] = 0.5;
        tree.transfers[2][0b01] = -0.25;
        assert_eq!(tree.along(&[1, -1, 1]).unwrap(), vec![0.0, 0.5, -0.25]);
        assert_eq!(tree.get(3, 0), Err(Error::MissingNode { k: 3, node: 0 }));
    }

    #[test]
    fn idle_strategy_without_capital_is_snell() {
        let spec = lattice(5);
        let payoff = PayoffSpec::put(1.05);
        let fr = Frictions::new(0.01, 0.01).unwrap();
        let r = evaluate_strategy_risk(&TransferTree::zeros(5), &spec, &payoff, &fr, 0.0).unwrap();
        assert!((r - snell_value(&spec, &payoff).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn covered_claim_has_no_risk() {
        let spec = lattice(4);
        let payoff = PayoffSpec::capped_call(1.0, 0.2);
        let r = evaluate_strategy_risk(&TransferTree::zeros(4), &spec, &payoff, &Frictions::zero(), 0.2).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn two_step_strategy_against_stopping_time_enumeration() {
        let spec = lattice(2);
        let fr = Frictions::new(0.01, 0.02).unwrap();
        let payoff = PayoffSpec::call(0.95);
        let x = 0.04;
        let mut tree = TransferTree::zeros(2);
        tree.transfers[0][0] = 0.37;
        tree.transfers[1][0] = -0.2;
        tree.transfers[1][1] = 0.15;
        let risk = evaluate_strategy_risk(&tree, &spec, &payoff, &fr, x).unwrap();

        let p = spec.p_n;
        // shortfall at step k along a path
        let shortfall = |signs: &[i8], k: usize| {
            let transfers = tree.along(signs).unwrap();
            let path = discrete_wealth_path(x, &transfers, signs, &spec, &fr).unwrap();
            (evaluate(&payoff, &spec, k, &signs[..k]).unwrap() - path.wealth[k]).max(0.0)
        };
        let prob = |signs: &[i8]| signs.iter().map(|&z| if z > 0 { p } else { 1.0 - p }).product::<f64>();
        // tau as a function of the path: 0, 1, 2, and the two rules stopping at 1 on one branch only
        let rules: [&dyn Fn(&[i8]) -> usize; 5] =
            [&|_| 0, &|_| 1, &|_| 2, &|s| if s[0] > 0 { 1 } else { 2 }, &|s| if s[0] > 0 { 2 } else { 1 }];
        let best = rules
            .iter()
            .map(|tau| paths(2).map(|s| prob(&s) * shortfall(&s, tau(&s))).sum::<f64>())
            .fold(0.0, f64::max);
        assert!((risk - best).abs() < 1e-14, "{risk} vs {best}");
    }

    #[test]
    fn null_claim_strategy_stays_flat() {
        let spec = lattice(4);
        let fr = Frictions::new(0.01, 0.01).unwrap();
        let payoff = PayoffSpec::zero();
        let grid = GridSpec::with_size(&spec, &payoff, &fr, 21, 11);
        let sol = solve(&spec, &payoff, &fr, &grid, SolveOptions::default()).unwrap();
        let path = extract_strategy(&sol, 0.3, &[1, -1, -1, 1]).unwrap();
        assert!(path.transfers.iter().all(|w| *w == 0.0));
        assert!(path.wealth.iter().all(|u| *u == 0.3));
    }

    #[test]
    fn extracted_wealth_replays_exactly() {
        let spec = lattice(6);
        let fr = Frictions::new(0.01, 0.005).unwrap();
        let payoff = PayoffSpec::call(1.0);
        let grid = GridSpec::with_size(&spec, &payoff, &fr, 41, 31);
        let sol = solve(&spec, &payoff, &fr, &grid, SolveOptions::default()).unwrap();
        for signs in paths(6).step_by(7) {
            let path = extract_strategy(&sol, 0.05, &signs).unwrap();
            let replay = discrete_wealth_path(0.05, &path.transfers, &signs, &spec, &fr).unwrap();
            assert_eq!(path.wealth, replay.wealth);
            assert_eq!(path.positions, replay.positions);
            let last = *path.prices.last().unwrap();
            assert!((path.positions.last().unwrap() - path.shares.last().unwrap() * last).abs() < 1e-12);
        }
    }

    #[test]
    fn extracted_tree_attains_the_grid_value() {
        let spec = lattice(5);
        let fr = Frictions::new(0.01, 0.01).unwrap();
        let payoff = PayoffSpec::call(1.0);
        let x = 0.03;
        let grid = GridSpec::with_size(&spec, &payoff, &fr, 61, 41).with_extra_u([x]);
        let sol = solve(&spec, &payoff, &fr, &grid, SolveOptions::default()).unwrap();
        let fine = solve(&spec, &payoff, &fr, &grid.refined(2), SolveOptions::default()).unwrap();
        let residual = (sol.risk_at(x) - fine.risk_at(x)).abs();
        let tree = extract_tree(&sol, x).unwrap();
        let attained = evaluate_strategy_risk(&tree, &spec, &payoff, &fr, x).unwrap();
        assert!((attained - sol.risk_at(x)).abs() <= 2.0 * residual.max(1e-6), "{attained} {} {residual}", sol.risk_at(x));
        for signs in paths(5) {
            assert_eq!(tree.along(&signs).unwrap(), extract_strategy(&sol, x, &signs).unwrap().transfers);
        }
    }

    #[test]
    fn risk_curve_is_non_increasing() {
        let spec = lattice(4);
        let fr = Frictions::new(0.01, 0.01).unwrap();
        let payoff = PayoffSpec::capped_call(1.0, 0.1);
        let grid = GridSpec::with_size(&spec, &payoff, &fr, 41, 31);
        let xs: Vec<f64> = (0..=50).map(|i| 0.12 * i as f64 / 50.0).collect();
        let curve = risk_curve(&spec, &payoff, &fr, &xs, &grid).unwrap();
        assert!(curve.points.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
        assert_eq!(curve.points.last().unwrap().1, 0.0);
        assert!(curve.max_slope <= 1.0 + 1e-9);
        assert!(risk_curve(&spec, &payoff, &fr, &[0.1, 0.05], &grid).is_err());
    }
}
