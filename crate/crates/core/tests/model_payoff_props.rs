use proptest::prelude::*;
use shortfall_core::model::{calibrate, stock_price, MarketParams};
use shortfall_core::payoff::{evaluate, PayoffSpec};

fn payoffs() -> Vec<PayoffSpec> {
    vec![
        PayoffSpec::call(1.0),
        PayoffSpec::call(0.0),
        PayoffSpec::put(1.1),
        PayoffSpec::capped_call(0.9, 0.2),
        PayoffSpec::lookback_max(),
        PayoffSpec::russian(),
        PayoffSpec::constant(0.3),
    ]
}

fn signs(n: usize) -> impl Strategy<Value = Vec<i8>> {
    proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], n)
}

proptest! {
    #[test]
    fn lattice_factors_are_ordered(
        s0 in 0.1f64..10.0, sigma in 0.01f64..1.0, kappa in -0.05f64..0.05, t in 0.1f64..3.0, n in 1usize..500,
    ) {
        let spec = calibrate(&MarketParams::new(s0, sigma, kappa, t).unwrap(), n).unwrap();
        prop_assert!(spec.a_n > 0.0 && spec.a_n < spec.b_n);
        prop_assert!(((1.0 + spec.b_n) * (1.0 - spec.a_n) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prices_recombine(path in signs(12), swap in 0usize..11) {
        let spec = calibrate(&MarketParams::default(), 12).unwrap();
        let mut other = path.clone();
        other.swap(swap, swap + 1);
        let ups = |p: &[i8]| p.iter().filter(|&&z| z > 0).count();
        prop_assert_eq!(ups(&path), ups(&other));
        let a = stock_price(&spec, 12, ups(&path)).unwrap();
        let level: i64 = path.iter().map(|&z| z as i64).sum();
        prop_assert!((a - spec.price_at_level(level)).abs() <= 1e-15 * a);
    }

    #[test]
    fn growth_bound_holds_on_lattice_paths(path in signs(20), k in 0usize..=20) {
        let spec = calibrate(&MarketParams::new(1.0, 0.3, 0.01, 1.0).unwrap(), 20).unwrap();
        let mut level = 0i64;
        let mut sup = spec.s0;
        for &z in &path[..k] {
            level += z as i64;
            sup = sup.max(spec.price_at_level(level));
        }
        for payoff in payoffs() {
            let f = evaluate(&payoff, &spec, k, &path[..k]).unwrap();
            prop_assert!(f >= 0.0);
            prop_assert!(f <= payoff.bound_c(&spec) * sup * (1.0 + 1e-12), "{:?}: {} > C sup", payoff.kind, f);
        }
    }

    #[test]
    fn payoff_ignores_the_future(head in signs(16), tail_a in signs(8), tail_b in signs(8), k in 0usize..=16) {
        let spec = calibrate(&MarketParams::default(), 24).unwrap();
        let a: Vec<i8> = head.iter().chain(&tail_a).copied().collect();
        let b: Vec<i8> = head.iter().chain(&tail_b).copied().collect();
        for payoff in payoffs() {
            let fa = evaluate(&payoff, &spec, k, &a[..k]).unwrap();
            let fb = evaluate(&payoff, &spec, k, &b[..k]).unwrap();
            prop_assert_eq!(fa.to_bits(), fb.to_bits());
        }
    }
}
