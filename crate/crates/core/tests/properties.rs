use bnnrisk::diagnostics::{ln_superharmonic_f, superharmonic_f};
use bnnrisk::estimators::DecisionRule;
use bnnrisk::mixing::{betaprime_inverse_cdf, BnnArchitecture, MixingSpec};
use bnnrisk::predictive::{ln_marginal_density_radial, PredictiveProblem};
use bnnrisk::risk::{excess_integrand, sparse_theta, sparsity_grid, sure};
use bnnrisk::shrinkage::{build_table, shrink_betaprime_closed, MixturePosterior, ShrinkageSource};
use bnnrisk::specialfn::{lower_incomplete_gamma, regularized_lower_gamma};
use proptest::prelude::*;

fn arch() -> impl Strategy<Value = BnnArchitecture> {
    (1usize..5, 0.1f64..3.0, 0.1f64..3.0).prop_flat_map(|(d, s, x)| {
        (
            prop::collection::vec(1usize..40, d - 1),
            prop::collection::vec(0.1f64..3.0, d),
        )
            .prop_map(move |(widths, mut scales)| {
                scales[0] *= s;
                BnnArchitecture {
                    widths,
                    scales,
                    input_norm: x,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn spec_strings_round_trip(a in arch(), q in 0.05f64..1.0, p in 5usize..200, v in 0.0f64..10.0) {
        let keep = vec![q; a.widths.len()];
        for spec in [
            MixingSpec::FixedBnn(a.clone()),
            MixingSpec::DropoutBnn { arch: a.clone(), keep },
            MixingSpec::BetaPrime { p },
            MixingSpec::PointMass { variance: v },
        ] {
            let parsed: MixingSpec = spec.to_string().parse().unwrap();
            prop_assert_eq!(parsed, spec);
        }
    }

    #[test]
    fn betaprime_quantile_inverts_cdf(b in 0.5f64..50.0, u in 0.0f64..0.999) {
        let w = betaprime_inverse_cdf(b, u);
        prop_assert!(w >= 0.0);
        let cdf = 1.0 - (1.0 + w).powf(-b);
        prop_assert!((cdf - u).abs() < 1e-9);
        prop_assert!(betaprime_inverse_cdf(b, (u + 1e-3).min(0.9999)) >= w);
    }

    #[test]
    fn closed_shrinkage_bounded_and_monotone(p in 5usize..120, s in 0.0f64..1e6, ds in 1e-3f64..1e3) {
        let a0 = shrink_betaprime_closed(p, s).unwrap();
        let a1 = shrink_betaprime_closed(p, s + ds).unwrap();
        prop_assert!((0.0..=1.0).contains(&a0));
        prop_assert!(a1 >= a0 - 1e-12);
    }

    #[test]
    fn closed_shrinkage_psi_bound(p in 5usize..60, s in 1.0f64..1e5) {
        // γ(a+1, λ) ≤ a γ(a, λ) gives ψ(s) ≤ 2(p−2)/s, tight as s → ∞
        let floor = 1.0 - 2.0 * (p as f64 - 2.0) / s;
        let a = shrink_betaprime_closed(p, s).unwrap();
        prop_assert!(a >= floor - 1e-12);
        if s > 1e4 * p as f64 {
            prop_assert!((1.0 - a) * s / (2.0 * (p as f64 - 2.0)) > 0.99);
        }
    }

    #[test]
    fn regularized_gamma_is_a_cdf(a in 0.2f64..60.0, x in 0.0f64..200.0) {
        let r = regularized_lower_gamma(a, x).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!(lower_incomplete_gamma(a, x + 0.5).unwrap() >= lower_incomplete_gamma(a, x).unwrap());
    }

    #[test]
    fn f_is_positive(a in 3.0f64..60.0, e in -6.0f64..6.0) {
        // λ^a underflows for large a at tiny λ, so check the logarithm
        let lf = ln_superharmonic_f(a, 10f64.powf(e)).unwrap();
        prop_assert!(lf.is_finite());
        if lf > -700.0 {
            prop_assert!(superharmonic_f(a, 10f64.powf(e)).unwrap() > 0.0);
        }
    }

    #[test]
    fn mixture_psi_bounds(draws in prop::collection::vec(0.0f64..1e4, 1..40), p in 1usize..60, s in 0.0f64..1e5) {
        let e = MixturePosterior::new(&draws, p).unwrap().eval(s).unwrap();
        prop_assert!(e.psi > 0.0 && e.psi <= 1.0);
        prop_assert!((e.psi + e.shrink - 1.0).abs() < 1e-12);
        prop_assert!(e.psi_prime <= 0.0 && e.psi_prime >= -0.5 * e.psi);
    }

    #[test]
    fn b_positive_past_the_barrier(p in 1usize..60, u in 0.0f64..1e6, psi in 0.0f64..1.0, dp in 0.0f64..1.0) {
        let b = excess_integrand(p, u, psi, -dp);
        if u * psi > 2.0 * p as f64 {
            prop_assert!(b > 0.0);
        }
    }

    #[test]
    fn sure_of_mle_is_p(y in prop::collection::vec(-1e3f64..1e3, 1..30)) {
        prop_assert_eq!(sure(|_| Ok((0.0, 0.0)), y.len(), &y).unwrap().sure, y.len() as f64);
    }

    #[test]
    fn sparse_theta_has_norm_r(r in 0.0f64..1e4, p in 1usize..300, kf in 0.0f64..1.0) {
        let k = 1 + ((p - 1) as f64 * kf) as usize;
        let t = sparse_theta(r, k, p).unwrap();
        let n = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - r).abs() <= 1e-12 * r.max(1.0));
        prop_assert_eq!(t.iter().filter(|x| **x != 0.0).count(), if r > 0.0 { k } else { 0 });
    }

    #[test]
    fn sparsity_grid_is_sorted_valid(p in 1usize..5000) {
        let g = sparsity_grid(p);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(g.iter().all(|&k| (1..=p).contains(&k)));
        prop_assert_eq!(*g.last().unwrap(), p);
    }

    #[test]
    fn radial_rules_contract(y in prop::collection::vec(-300.0f64..300.0, 5)) {
        let n = y.iter().map(|x| x * x).sum::<f64>().sqrt();
        let out = DecisionRule::bnn_hyper(5).unwrap().apply(&y, None).unwrap();
        prop_assert!(out.iter().map(|x| x * x).sum::<f64>().sqrt() <= n * (1.0 + 1e-15));
    }

    #[test]
    fn marginal_decreases_in_radius(s in 0.0f64..1e4, ds in 1e-2f64..100.0, v in 0.05f64..20.0) {
        let prob = PredictiveProblem::betaprime(5).unwrap();
        let a = ln_marginal_density_radial(s, v, &prob).unwrap();
        let b = ln_marginal_density_radial(s + ds, v, &prob).unwrap();
        prop_assert!(b < a);
        prop_assert!(a <= -2.5 * (2.0 * std::f64::consts::PI * v).ln());
    }
}

#[test]
fn tables_are_clamped_and_interpolate_between_nodes() {
    let t = build_table(ShrinkageSource::BetaPrimeClosed, 7, 50, 900.0).unwrap();
    for w in t.grid().windows(2).zip(t.values().windows(2)) {
        let ((g0, g1), (v0, v1)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
        let mid = t.eval(0.5 * (g0 + g1));
        assert!(mid >= v0.min(v1) && mid <= v0.max(v1));
    }
    assert_eq!(t.eval(1e9), *t.values().last().unwrap());
}
