//! Brownian driver simulation, first-exit crossing records and the lift of
//! binomial strategies into the continuous market.
//!
//! `W*(t) = ln S(t) / sigma` is a Brownian motion with drift
//! `kappa / sigma - sigma / 2`. Its successive exits from bands of half-width
//! `sqrt(T / n)` reproduce the n-step lattice: the signs of the exits are
//! i.i.d. with the lattice up probability, and the price at the k-th exit
//! is the lattice price after k moves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{Solution, TransferTree};
use crate::error::{Error, Result};
use crate::friction::{crossing_wealth_path, discrete_wealth_path, wealth_step};
use crate::model::{Frictions, LatticeSpec, MarketParams};
use crate::payoff::PayoffSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Fine grid steps over `[0, t_sim]`.
    pub fine_steps: usize,
    pub t_sim: f64,
    pub paths: usize,
    pub seed: u64,
    /// Pair path `2i + 1` with the negated increments of path `2i`.
    #[serde(default)]
    pub antithetic: bool,
}

impl SimConfig {
    /// Default horizon of four maturities and `200 n` fine steps.
    pub fn for_steps(params: &MarketParams, n: usize, paths: usize, seed: u64) -> Self {
        Self { fine_steps: 200 * n, t_sim: 4.0 * params.maturity, paths, seed, antithetic: false }
    }

    pub fn dt(&self) -> f64 {
        self.t_sim / self.fine_steps as f64
    }

    pub fn validate(&self, params: &MarketParams) -> Result<()> {
        if self.fine_steps == 0 || self.paths == 0 {
            return Err(Error::InvalidParameter("fine_steps and paths must be >= 1".into()));
        }
        if !(self.t_sim >= params.maturity) {
            return Err(Error::InvalidParameter("t_sim must be >= maturity".into()));
        }
        Ok(())
    }

    /// Whether the fine grid resolves crossings of the n-step bands.
    pub fn resolves(&self, n: usize) -> bool {
        self.fine_steps >= 100 * n
    }
}

/// `W*` sampled on the fine grid `t_i = i dt`, `i = 0..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    pub dt: f64,
    pub w_star: Vec<f64>,
}

impl DriverPath {
    pub fn time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }

    /// Stock price `exp(sigma W*(t_i))`.
    pub fn price(&self, sigma: f64, i: usize) -> f64 {
        (sigma * self.w_star[i]).exp()
    }
}

/// Standard normal draws driving path `path_index`; deterministic in
/// `(seed, path_index)` alone.
pub fn driver_normals(config: &SimConfig, path_index: u64) -> Vec<f64> {
    let (stream, flip) = if config.antithetic { (path_index / 2, path_index % 2 == 1) } else { (path_index, false) };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let sign = if flip { -1.0 } else { 1.0 };
    (0..config.fine_steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sign * z
        })
        .collect()
}

pub fn simulate_driver(params: &MarketParams, config: &SimConfig, path_index: u64) -> DriverPath {
    let dt = config.dt();
    let drift = (params.kappa / params.sigma - 0.5 * params.sigma) * dt;
    let scale = dt.sqrt();
    let mut w_star = Vec::with_capacity(config.fine_steps + 1);
    let mut w = params.s0.ln() / params.sigma;
    w_star.push(w);
    for z in driver_normals(config, path_index) {
        w += drift + scale * z;
        w_star.push(w);
    }
    DriverPath { dt, w_star }
}

/// Crossing times, signs and prices of one driver path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingRecord {
    /// `theta_0 = 0 < theta_1 < ...`, one entry per crossing found (plus `theta_0`).
    pub theta: Vec<f64>,
    /// Fine-grid index of each crossing.
    pub index: Vec<usize>,
    pub signs: Vec<i8>,
    /// Lattice price at each crossing.
    pub prices: Vec<f64>,
    pub completed: bool,
}

/// Scans the fine grid for successive exits of `+-sqrt(T / n)` bands. Each band
/// is centred on the exact lattice level of the previous exit, so the
/// detection overshoot does not accumulate.
pub fn extract_crossings(path: &DriverPath, spec: &LatticeSpec) -> CrossingRecord {
    let n = spec.n;
    let h = (spec.maturity / n as f64).sqrt();
    let origin = path.w_star[0];
    let mut theta = vec![0.0];
    let mut index = vec![0];
    let mut signs = Vec::with_capacity(n);
    let mut prices = vec![spec.s0];
    let mut level = 0i64;
    let mut centre = origin;
    for (i, &w) in path.w_star.iter().enumerate().skip(1) {
        if signs.len() == n {
            break;
        }
        let d = w - centre;
        if d >= h || d <= -h {
            let up = d > 0.0;
            level += if up { 1 } else { -1 };
            centre = origin + h * level as f64;
            signs.push(if up { 1 } else { -1 });
            theta.push(path.time(i));
            index.push(i);
            prices.push(spec.price_at_level(level));
        }
    }
    let completed = signs.len() == n;
    CrossingRecord { theta, index, signs, prices, completed }
}

/// Lifted and binomial wealth at the crossing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedWealth {
    pub transfers: Vec<f64>,
    /// Wealth of the lifted strategy at `theta_0..=theta_n`.
    pub lifted: Vec<f64>,
    /// Wealth of the binomial strategy on the same sign sequence.
    pub binomial: Vec<f64>,
    pub positions: Vec<f64>,
    /// Steps where the two disagree beyond `1e-10 (1 + |wealth|)`.
    pub violations: usize,
}

pub const LIFT_TOL: f64 = 1e-10;

/// Runs the binomial strategy along the record's signs with the observed
/// crossing prices and compares with the lattice wealth.
pub fn lift_strategy(
    tree: &TransferTree,
    record: &CrossingRecord,
    spec: &LatticeSpec,
    x: f64,
    fr: &Frictions,
) -> Result<LiftedWealth> {
    if !record.completed {
        return Err(Error::IncompleteRecord { found: record.signs.len(), needed: spec.n });
    }
    let transfers = tree.along(&record.signs)?;
    let lifted = crossing_wealth_path(x, &transfers, &record.prices, spec, fr)?;
    let binomial = discrete_wealth_path(x, &transfers, &record.signs, spec, fr)?;
    let violations = lifted
        .wealth
        .iter()
        .zip(&binomial.wealth)
        .filter(|(a, b)| (*a - *b).abs() > LIFT_TOL * (1.0 + b.abs()))
        .count();
    Ok(LiftedWealth {
        transfers,
        lifted: lifted.wealth,
        binomial: binomial.wealth,
        positions: lifted.positions,
        violations,
    })
}

/// Running mean (compensated sum) and standard error (Welford update).
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
    mean: f64,
    m2: f64,
    count: usize,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.sum + self.comp) / self.count as f64
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2.max(0.0) / (n - 1.0) / n).sqrt()
    }

    pub fn estimate(&self, n: usize, estimator: &str) -> DiagnosticRow {
        DiagnosticRow {
            n,
            estimator: estimator.to_string(),
            estimate: self.mean(),
            std_error: self.std_error(),
            n_effective: self.count,
        }
    }
}

/// One row of the convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub n: usize,
    pub estimator: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n_effective: usize,
}

pub const EST_PRICE_GAP: &str = "sup_price_gap";
pub const EST_THETA_GAP: &str = "max_theta_gap";
pub const EST_PAYOFF_GAP: &str = "sup_payoff_gap";
pub const EST_INCOMPLETE: &str = "incomplete_fraction";

/// Per-path gaps between the continuous price path and its embedded lattice path.
struct PathGaps {
    price: f64,
    theta: f64,
    payoff: f64,
}

/// Index of the lattice step in force at fine time `t <= T`.
fn lattice_step(t: f64, spec: &LatticeSpec) -> usize {
    (((t * spec.n as f64 / spec.maturity) + 1e-9).floor() as usize).min(spec.n)
}

fn last_index_before(path: &DriverPath, maturity: f64) -> usize {
    (((maturity / path.dt) + 1e-9).floor() as usize).min(path.w_star.len() - 1)
}

fn path_gaps(path: &DriverPath, record: &CrossingRecord, spec: &LatticeSpec, payoff: &PayoffSpec) -> PathGaps {
    let last = last_index_before(path, spec.maturity);
    let mut price_gap = 0.0f64;
    let mut payoff_gap = 0.0f64;
    let mut run_max = 0.0f64;
    let mut run_max_lattice = 0.0f64;
    for i in 0..=last {
        let t = path.time(i);
        let s = path.price(spec.sigma, i);
        let k = lattice_step(t, spec);
        let s_lattice = record.prices[k];
        run_max = run_max.max(s);
        run_max_lattice = run_max_lattice.max(s_lattice);
        price_gap = price_gap.max((s_lattice - s).abs());
        let y = payoff.value(s, run_max);
        let y_lattice = payoff.value(s_lattice, run_max_lattice);
        payoff_gap = payoff_gap.max((y - y_lattice).abs());
    }
    let theta_gap = (1..=spec.n)
        .map(|k| (record.theta[k] - spec.time(k)).abs())
        .fold(0.0f64, f64::max);
    PathGaps { price: price_gap, theta: theta_gap, payoff: payoff_gap }
}

/// Monte Carlo estimates of the embedding gaps for each step count in `n_list`.
pub fn convergence_diagnostics(
    params: &MarketParams,
    payoff: &PayoffSpec,
    n_list: &[usize],
    config: &SimConfig,
) -> Result<Vec<DiagnosticRow>> {
    config.validate(params)?;
    let mut rows = Vec::new();
    for &n in n_list {
        let spec = crate::model::calibrate(params, n)?;
        if !config.resolves(n) {
            log::warn!("fine grid of {} steps is coarse for n = {n}", config.fine_steps);
        }
        let gaps: Vec<Option<PathGaps>> = (0..config.paths as u64)
            .into_par_iter()
            .map(|i| {
                let path = simulate_driver(params, config, i);
                let record = extract_crossings(&path, &spec);
                record.completed.then(|| path_gaps(&path, &record, &spec, payoff))
            })
            .collect();
        let (mut price, mut theta, mut pay, mut incomplete) =
            (Accumulator::default(), Accumulator::default(), Accumulator::default(), Accumulator::default());
        for g in &gaps {
            incomplete.push(if g.is_some() { 0.0 } else { 1.0 });
            if let Some(g) = g {
                price.push(g.price);
                theta.push(g.theta);
                pay.push(g.payoff);
            }
        }
        rows.push(price.estimate(n, EST_PRICE_GAP));
        rows.push(theta.estimate(n, EST_THETA_GAP));
        rows.push(pay.estimate(n, EST_PAYOFF_GAP));
        rows.push(incomplete.estimate(n, EST_INCOMPLETE));
    }
    Ok(rows)
}

/// Lower estimate and heuristic upper proxy for the continuous-time risk of
/// the lifted optimal binomial strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortfallBracket {
    pub n: usize,
    pub risk_n: f64,
    pub lower: f64,
    pub lower_std_error: f64,
    pub lower_rule: String,
    pub upper_proxy: f64,
    pub upper_std_error: f64,
    pub completed_paths: usize,
    pub incomplete_paths: usize,
    pub lift_violations: usize,
    /// The upper proxy omits the density-ratio correction and is not a proven bound.
    pub heuristic: bool,
}

/// Threshold rules stop at the first fine time where the shortfall reaches
/// `level * S0`.
pub const THRESHOLD_LEVELS: [f64; 5] = [0.01, 0.02, 0.05, 0.1, 0.2];

fn rule_names(n: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..=n).map(|k| format!("theta_{k}^T")).collect();
    names.push("maturity".into());
    names.extend(THRESHOLD_LEVELS.iter().map(|c| format!("threshold_{c}")));
    names
}

struct PathShortfalls {
    per_rule: Vec<f64>,
    payoff_gap: f64,
    violations: usize,
}

fn path_shortfalls(
    path: &DriverPath,
    record: &CrossingRecord,
    lift: &LiftedWealth,
    spec: &LatticeSpec,
    payoff: &PayoffSpec,
    fr: &Frictions,
) -> PathShortfalls {
    let n = spec.n;
    let last = last_index_before(path, spec.maturity);
    let mut per_rule = vec![f64::NAN; n + 2 + THRESHOLD_LEVELS.len()];
    let mut run_max = 0.0f64;
    let mut run_max_lattice = 0.0f64;
    let mut payoff_gap = 0.0f64;
    let mut k = 0usize;
    for i in 0..=last {
        let s = path.price(spec.sigma, i);
        run_max = run_max.max(s);
        while k < n && record.index[k + 1] <= i {
            k += 1;
        }
        // wealth before any transfer at this instant
        let wealth = if i == record.index[k] {
            lift.lifted[k]
        } else if k == n {
            lift.lifted[n]
        } else {
            let rho = s / record.prices[k];
            wealth_step(lift.lifted[k], lift.positions[k], lift.transfers[k], rho, fr)
        };
        let y = payoff.value(s, run_max);
        let shortfall = (y - wealth).max(0.0);
        if i == record.index[k] && per_rule[k].is_nan() {
            per_rule[k] = shortfall;
        }
        for (j, level) in THRESHOLD_LEVELS.iter().enumerate() {
            let slot = n + 2 + j;
            if per_rule[slot].is_nan() && shortfall >= level * spec.s0 {
                per_rule[slot] = shortfall;
            }
        }
        if i == last {
            for slot in per_rule.iter_mut() {
                if slot.is_nan() {
                    *slot = shortfall;
                }
            }
        }
        let step = lattice_step(path.time(i), spec);
        let s_lattice = record.prices[step];
        run_max_lattice = run_max_lattice.max(s_lattice);
        payoff_gap = payoff_gap.max((y - payoff.value(s_lattice, run_max_lattice)).abs());
    }
    PathShortfalls { per_rule, payoff_gap, violations: lift.violations }
}

/// Simulates `config.paths` driver paths, lifts the optimal strategy `tree`
/// (built from `sol` at capital `x`) and brackets its continuous-time risk.
pub fn shortfall_bracket(
    x: f64,
    sol: &Solution,
    tree: &TransferTree,
    params: &MarketParams,
    config: &SimConfig,
) -> Result<ShortfallBracket> {
    config.validate(params)?;
    let spec = &sol.spec;
    let fr = &sol.frictions;
    let payoff = &sol.payoff;
    let risk_n = sol.risk_at(x);
    let results: Vec<Result<Option<PathShortfalls>>> = (0..config.paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = simulate_driver(params, config, i);
            let record = extract_crossings(&path, spec);
            if !record.completed {
                return Ok(None);
            }
            let lift = lift_strategy(tree, &record, spec, x, fr)?;
            Ok(Some(path_shortfalls(&path, &record, &lift, spec, payoff, fr)))
        })
        .collect();
    let names = rule_names(spec.n);
    let mut rules = vec![Accumulator::default(); names.len()];
    let mut gap = Accumulator::default();
    let mut incomplete = 0;
    let mut violations = 0;
    for r in results {
        match r? {
            None => incomplete += 1,
            Some(p) => {
                for (acc, v) in rules.iter_mut().zip(&p.per_rule) {
                    acc.push(*v);
                }
                gap.push(p.payoff_gap);
                violations += p.violations;
            }
        }
    }
    let (best, acc) = rules
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean().total_cmp(&b.1.mean()))
        .expect("at least one rule");
    Ok(ShortfallBracket {
        n: spec.n,
        risk_n,
        lower: acc.mean(),
        lower_std_error: acc.std_error(),
        lower_rule: names[best].clone(),
        upper_proxy: risk_n + gap.mean(),
        upper_std_error: gap.std_error(),
        completed_paths: gap.count(),
        incomplete_paths: incomplete,
        lift_violations: violations,
        heuristic: true,
    })
}
