use shortfall_core::dp::{extract_tree, solve, GridSpec, SolveOptions};
use shortfall_core::embed::{
    convergence_diagnostics, extract_crossings, lift_strategy, shortfall_bracket, simulate_driver, Accumulator,
    SimConfig, EST_INCOMPLETE,
};
use shortfall_core::model::{calibrate, Frictions, MarketParams};
use shortfall_core::payoff::PayoffSpec;

fn params(kappa: f64) -> MarketParams {
    MarketParams::new(1.0, 0.25, kappa, 1.0).unwrap()
}

#[test]
fn driver_increment_has_the_right_law() {
    let p = params(0.04);
    let cfg = SimConfig { fine_steps: 50, t_sim: 1.0, paths: 20_000, seed: 3, antithetic: false };
    let mut acc = Accumulator::default();
    let mut sq = Accumulator::default();
    let drift = p.kappa / p.sigma - p.sigma / 2.0;
    for i in 0..cfg.paths as u64 {
        let path = simulate_driver(&p, &cfg, i);
        let d = path.w_star[cfg.fine_steps] - path.w_star[0];
        acc.push(d);
        sq.push((d - drift).powi(2));
    }
    assert!((acc.mean() - drift).abs() < 4.0 * acc.std_error(), "mean {} vs {}", acc.mean(), drift);
    assert!((sq.mean() - 1.0).abs() < 0.05, "variance {}", sq.mean());
}

#[test]
fn first_sign_frequency_matches_lattice_probability() {
    for kappa in [0.0, 0.25 * 0.25 / 2.0, 0.15] {
        let p = params(kappa);
        let spec = calibrate(&p, 4).unwrap();
        let cfg = SimConfig::for_steps(&p, 4, 6000, 21);
        let mut ups = Accumulator::default();
        for i in 0..cfg.paths as u64 {
            let rec = extract_crossings(&simulate_driver(&p, &cfg, i), &spec);
            if let Some(&z) = rec.signs.first() {
                ups.push(if z > 0 { 1.0 } else { 0.0 });
            }
        }
        let se = (spec.p_n * (1.0 - spec.p_n) / ups.count() as f64).sqrt();
        assert!((ups.mean() - spec.p_n).abs() < 4.0 * se, "kappa {kappa}: {} vs {}", ups.mean(), spec.p_n);
    }
}

#[test]
fn longer_horizon_leaves_fewer_incomplete_records() {
    let p = params(0.0);
    let short = SimConfig { fine_steps: 1600, t_sim: 1.0, paths: 1000, seed: 5, antithetic: false };
    let long = SimConfig { fine_steps: 6400, t_sim: 4.0, ..short };
    let fraction = |cfg: &SimConfig| {
        let rows = convergence_diagnostics(&p, &PayoffSpec::call(1.0), &[8], cfg).unwrap();
        rows.iter().find(|r| r.estimator == EST_INCOMPLETE).unwrap().estimate
    };
    let (a, b) = (fraction(&short), fraction(&long));
    assert!(b < a, "{b} !< {a}");
}

#[test]
fn diagnostics_do_not_depend_on_thread_count() {
    let p = params(0.01);
    let cfg = SimConfig::for_steps(&p, 8, 200, 9);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| convergence_diagnostics(&p, &PayoffSpec::lookback_max(), &[4, 8], &cfg).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.estimate.to_bits(), y.estimate.to_bits());
        assert_eq!(x.std_error.to_bits(), y.std_error.to_bits());
    }
}

fn small_solution(payoff: PayoffSpec, n: usize) -> (shortfall_core::dp::Solution, MarketParams) {
    let p = params(0.0);
    let spec = calibrate(&p, n).unwrap();
    let fr = Frictions::new(0.01, 0.01).unwrap();
    let grid = GridSpec::with_size(&spec, &payoff, &fr, 41, 31);
    (solve(&spec, &payoff, &fr, &grid, SolveOptions::default()).unwrap(), p)
}

#[test]
fn bracket_is_consistent_and_lift_is_exact() {
    let (sol, p) = small_solution(PayoffSpec::call(1.0), 4);
    let x = 0.04;
    let tree = extract_tree(&sol, x).unwrap();
    for seed in [1, 2, 3] {
        let cfg = SimConfig::for_steps(&p, 4, 400, seed);
        let b = shortfall_bracket(x, &sol, &tree, &p, &cfg).unwrap();
        assert_eq!(b.lift_violations, 0);
        assert!(b.lower <= b.upper_proxy, "{} > {}", b.lower, b.upper_proxy);
        assert!(b.heuristic);
        assert_eq!(b.completed_paths + b.incomplete_paths, 400);
    }
    let cfg = SimConfig::for_steps(&p, 4, 300, 8);
    let spec = sol.spec;
    for i in 0..cfg.paths as u64 {
        let rec = extract_crossings(&simulate_driver(&p, &cfg, i), &spec);
        if rec.completed {
            let lift = lift_strategy(&tree, &rec, &spec, x, &sol.frictions).unwrap();
            assert_eq!(lift.violations, 0);
        }
    }
}

#[test]
fn null_claim_has_an_empty_bracket() {
    let (sol, p) = small_solution(PayoffSpec::zero(), 3);
    let tree = extract_tree(&sol, 0.0).unwrap();
    let b = shortfall_bracket(0.0, &sol, &tree, &p, &SimConfig::for_steps(&p, 3, 200, 4)).unwrap();
    assert_eq!(b.lower, 0.0);
    assert_eq!(b.upper_proxy, 0.0);
    let rows = convergence_diagnostics(&p, &PayoffSpec::zero(), &[3], &SimConfig::for_steps(&p, 3, 50, 1)).unwrap();
    assert!(rows.iter().any(|r| r.estimator == "sup_payoff_gap" && r.estimate == 0.0));
}
