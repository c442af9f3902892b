use proptest::prelude::*;
use shortfall_core::friction::{admissible_interval, is_admissible, wealth_step};
use shortfall_core::model::Frictions;

fn frictions() -> impl Strategy<Value = Frictions> {
    (0.0f64..0.05, 0.0f64..0.05).prop_map(|(l, m)| Frictions::new(l, m).unwrap())
}

fn moves() -> impl Strategy<Value = (f64, f64)> {
    (0.005f64..0.3).prop_map(|d: f64| (1.0 - (-d).exp(), d.exp_m1()))
}

proptest! {
    #[test]
    fn liquidation_returns_wealth(u in 0.0f64..10.0, v in -10.0f64..10.0, rho in 0.5f64..1.5, fr in frictions()) {
        prop_assert_eq!(wealth_step(u, v, -v, rho, &fr), u);
    }

    #[test]
    fn interval_matches_membership_oracle(
        u in 0.0f64..5.0, v in -5.0f64..5.0, t in -0.5f64..1.5, (a, b) in moves(), fr in frictions(),
    ) {
        let iv = admissible_interval(u, v, a, b, &fr).unwrap();
        prop_assert!(is_admissible(u, v, iv.lo, a, b, &fr));
        prop_assert!(is_admissible(u, v, iv.hi, a, b, &fr));
        let w = iv.lo + t * iv.width();
        if !iv.contains(w) {
            // strictly outside by a margin the slack cannot absorb
            let gap = (w - iv.hi).max(iv.lo - w);
            if gap > 1e-6 {
                prop_assert!(!is_admissible(u, v, w, a, b, &fr));
            }
        } else {
            prop_assert!(is_admissible(u, v, w, a, b, &fr));
        }
        prop_assert!(!is_admissible(u, v, iv.hi + 1e-3, a, b, &fr));
        prop_assert!(!is_admissible(u, v, iv.lo - 1e-3, a, b, &fr));
    }

    #[test]
    fn interval_grows_with_wealth(
        u in 0.0f64..5.0, du in 0.0f64..5.0, v in -5.0f64..5.0, (a, b) in moves(), fr in frictions(),
    ) {
        let small = admissible_interval(u, v, a, b, &fr).unwrap();
        let large = admissible_interval(u + du, v, a, b, &fr).unwrap();
        prop_assert!(large.lo <= small.lo && small.hi <= large.hi);
    }

    #[test]
    fn interval_endpoints_are_continuous(
        u in 0.0f64..5.0, v in -5.0f64..5.0, du in -1.0f64..1.0, dv in -1.0f64..1.0, (a, b) in moves(), fr in frictions(),
    ) {
        let h = 1e-7;
        let base = admissible_interval(u, v, a, b, &fr).unwrap();
        let moved = admissible_interval((u + h * du).max(0.0), v + h * dv, a, b, &fr).unwrap();
        let sell = 1.0 - fr.mu;
        let buy = 1.0 + fr.lambda;
        let rate = (a * sell).min(b * buy).min(buy - sell * (1.0 - a)).min(buy * (1.0 + b) - sell);
        let lip = 2.0 + 2.0 / rate;
        prop_assert!((moved.lo - base.lo).abs() <= lip * 2.0 * h + 1e-12);
        prop_assert!((moved.hi - base.hi).abs() <= lip * 2.0 * h + 1e-12);
    }

    #[test]
    fn wealth_map_is_affine_on_sign_regions(
        u in 0.0f64..5.0, v in -5.0f64..5.0, t in 0.05f64..0.95, rho in 0.5f64..1.5, fr in frictions(),
        region in 0usize..4,
    ) {
        // breakpoints of w -> G are w = 0 and w = -v
        let (p, q) = if v >= 0.0 { (-v, 0.0) } else { (0.0, -v) };
        let (lo, hi) = match region {
            0 => (p - 10.0, p),
            1 => (p, q),
            _ => (q, q + 10.0),
        };
        prop_assume!(hi - lo > 1e-6);
        let w1 = lo + 0.01 * (hi - lo);
        let w3 = lo + 0.99 * (hi - lo);
        let w2 = w1 + t * (w3 - w1);
        let g = |w| wealth_step(u, v, w, rho, &fr);
        let interp = g(w1) + t * (g(w3) - g(w1));
        prop_assert!((g(w2) - interp).abs() <= 1e-10 * (1.0 + u + v.abs() + hi.abs() + lo.abs()));
    }
}
