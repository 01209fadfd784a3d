//! Property tests over randomized inputs.

use blowup_lab::curve::{sandwich_probe, BlowupCurve};
use blowup_lab::expr::Expr;
use blowup_lab::io::fmt17;
use blowup_lab::ode::closed_form_state;
use blowup_lab::selfsimilar::SimilarityProfile;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn derivative_matches_central_difference(a in -3.0f64..3.0, b in -3.0f64..3.0, c in 0.1f64..4.0, x in -1.0f64..1.0) {
        let e = Expr::parse(&format!("{a}*x^3 + {b}*sin({c}*x) + exp(-x^2)/(2 + cos(x))")).unwrap();
        let d = e.derivative().eval(x).unwrap();
        let step = 1e-5;
        let fd = (e.eval(x + step).unwrap() - e.eval(x - step).unwrap()) / (2.0 * step);
        prop_assert!((d - fd).abs() <= 1e-6 * (1.0 + d.abs()), "{d} vs {fd}");
    }

    #[test]
    fn constants_have_zero_derivative(v in -1e6f64..1e6, x in -10.0f64..10.0) {
        let e = Expr::parse(&format!("({v})*2 - 1")).unwrap();
        prop_assert!(!e.depends_on_x());
        prop_assert_eq!(e.derivative().eval(x).unwrap(), 0.0);
    }

    #[test]
    fn profile_scaling_covariance(
        p in 1.2f64..4.0,
        alpha in -0.9f64..0.9,
        y in -2.0f64..2.0,
        gap in 0.01f64..3.0,
        lambda in 0.01f64..100.0,
    ) {
        let prof = SimilarityProfile::new(p, alpha).unwrap();
        let s = alpha * y - gap;
        let (a, c) = prof.eval(y, s).unwrap();
        let (la, lc) = prof.eval(lambda * y, lambda * s).unwrap();
        let lq = lambda.powf(prof.q);
        prop_assert!((lq * la - a).abs() <= 1e-12 * a);
        prop_assert!((lq * lc - c).abs() <= 1e-12 * c);
        prop_assert!(prof.residual(&[(y, s)]).unwrap().max_rel <= 1e-10);
    }

    #[test]
    fn ode_sum_increases(gamma in 8.5f64..40.0, mu in 0.0f64..1.0, f1 in 0.0f64..0.99, f2 in 0.0f64..0.99) {
        let t1 = blowup_lab::ode::closed_form_t1(2.0, mu, gamma).unwrap();
        let (lo, hi) = (f1.min(f2) * t1, f1.max(f2) * t1);
        let a = closed_form_state(2.0, mu, 0.5 * gamma, 0.5 * gamma, lo).unwrap();
        let b = closed_form_state(2.0, mu, 0.5 * gamma, 0.5 * gamma, hi).unwrap();
        prop_assert!(b.y >= a.y);
    }

    #[test]
    fn sandwich_holds_on_lipschitz_curves(steps in proptest::collection::vec(-0.5f64..0.5, 20..80), seed in 0u64..1000) {
        let dx = 0.01;
        let xs: Vec<f64> = (0..=steps.len()).map(|i| i as f64 * dx).collect();
        let mut t = vec![1.0];
        for s in &steps {
            t.push(t.last().unwrap() + s * dx);
        }
        let curve = BlowupCurve::from_samples(xs, t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = sandwich_probe(&curve, 50, 0.5, &mut rng).unwrap();
        prop_assert_eq!(probe.violations, 0);
    }

    #[test]
    fn fmt17_roundtrips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
    }
}
