//! Monte Carlo checks against independent references.

use bnnrisk::diagnostics::tail_decay_probe;
use bnnrisk::estimators::DecisionRule;
use bnnrisk::horseshoe::{posterior_mean, HorseshoeConfig};
use bnnrisk::mixing::{build_mixing_sample, MixingSpec};
use bnnrisk::predictive::{combined_point, ln_marginal_density, PredictiveProblem};
use bnnrisk::risk::{excess_integrand, mc_risk, mc_sure, risk_curve, sure};
use bnnrisk::rng::stream;
use bnnrisk::shrinkage::MixturePosterior;
use bnnrisk::specialfn::ln_gamma;
use rand::Rng;
use rand_distr::StandardNormal;

fn digamma(x: f64) -> f64 {
    let h = 1e-5;
    (ln_gamma(x + h).unwrap() - ln_gamma(x - h).unwrap()) / (2.0 * h)
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0).unwrap()
        - ln_gamma(k as f64 + 1.0).unwrap()
        - ln_gamma((n - k) as f64 + 1.0).unwrap()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

#[test]
fn fixed_scale_log_variance_mean() {
    // E ln V = ln(4·1·1) + 2 Σ_k w_k ψ(k/2), w_k ∝ C(20, k) on 1..=20
    let norm: f64 = (1..=20).map(|k| ln_choose(20, k).exp()).sum();
    let per_layer: f64 = (1..=20)
        .map(|k| ln_choose(20, k).exp() / norm * digamma(k as f64 / 2.0))
        .sum();
    let want = 4f64.ln() + 2.0 * per_layer;
    let sample = build_mixing_sample(&MixingSpec::fixed_reference(), 100_000, 77).unwrap();
    let logs: Vec<f64> = sample.draws().iter().map(|v| v.ln()).collect();
    let (m, sd) = mean_sd(&logs);
    let se = sd / (logs.len() as f64).sqrt();
    assert!((m - want).abs() < 4.0 * se, "{m} vs {want} (se {se})");
}

#[test]
fn dropout_near_full_keep_is_close_to_fixed() {
    let fixed = build_mixing_sample(&MixingSpec::fixed_reference(), 50_000, 1).unwrap();
    let spec: MixingSpec = "dropout-bnn:n=20,20;sigma=1,1,1;x=1;q=0.999,0.999"
        .parse()
        .unwrap();
    let drop = build_mixing_sample(&spec, 50_000, 2).unwrap();
    // two-sample Kolmogorov–Smirnov at about the 0.1% level; the 0.2% scale
    // shift from the keep-probability prefactor is far below its resolution
    let mut a = fixed.draws().to_vec();
    let mut b = drop.draws().to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    let crit = 1.95 * (2.0 / 50_000.0f64).sqrt();
    assert!(d < crit, "KS distance {d} ≥ {crit}");
}

#[test]
fn sure_tracks_risk_for_the_hyper_rule() {
    // SURE of the BetaPrime rule from a mixing sample, against direct risk
    let sample = build_mixing_sample(&MixingSpec::BetaPrime { p: 5 }, 4000, 9).unwrap();
    let post = MixturePosterior::new(sample.draws(), 5).unwrap();
    let psi = |u: f64| post.eval(u).map(|e| (e.psi, e.psi_prime));
    let theta = [2.0, 1.0, 0.0, 0.0, -1.0];
    let s = mc_sure(psi, &theta, 20_000, 10).unwrap();
    let r = bnnrisk::risk::mc_risk_with(&theta, 20_000, 11, |y, _| {
        let u: f64 = y.iter().map(|x| x * x).sum();
        let a = post.eval(u)?.shrink;
        Ok(y.iter().map(|x| a * x).collect())
    })
    .unwrap();
    let z = (s.risk - r.risk).abs() / (s.stderr.powi(2) + r.stderr.powi(2)).sqrt();
    assert!(z < 3.0, "SURE {s:?} vs risk {r:?}");
}

#[test]
fn fixed_scale_excess_is_positive_past_the_barrier() {
    let sample = build_mixing_sample(&MixingSpec::fixed_reference(), 50_000, 12).unwrap();
    let post = MixturePosterior::new(sample.draws(), 5).unwrap();
    for i in 0..=200 {
        let u = 1e4 + (2.5e5 - 1e4) * i as f64 / 200.0;
        let e = post.eval(u).unwrap();
        let b = excess_integrand(5, u, e.psi, e.psi_prime);
        if u * e.psi > 10.0 && e.psi_prime <= 0.0 {
            assert!(b > 0.0, "u={u}: B={b}");
        }
        let y = [u.sqrt(), 0.0, 0.0, 0.0, 0.0];
        let s = sure(|_| Ok((e.psi, e.psi_prime)), 5, &y).unwrap();
        assert!((s.sure - 5.0 - b).abs() < 1e-9 * b.abs().max(1.0));
    }
}

#[test]
fn mle_curve_sits_on_p_over_the_full_grid() {
    let grid: Vec<f64> = (0..=500).map(|r| r as f64).collect();
    let c = risk_curve(&DecisionRule::mle(), 50, &grid, 2, 2000, 2024).unwrap();
    let worst = c
        .risks
        .iter()
        .zip(&c.stderrs)
        .map(|(r, s)| (r - 50.0).abs() / s)
        .fold(0.0, f64::max);
    assert!(worst <= 3.0, "max |risk − 50|/se = {worst}");
}

#[test]
fn james_stein_origin_risk_matches_chi_square_identity() {
    // E[(U − 3)²/U] for U ~ χ²_5, from a separate stream of chi-square draws
    let mut rng = stream(31, &[]);
    let n = 400_000;
    let vals: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = (0..5)
                .map(|_| rng.sample::<f64, _>(StandardNormal).powi(2))
                .sum();
            (u - 3.0).powi(2) / u
        })
        .collect();
    let (m, sd) = mean_sd(&vals);
    let oracle_se = sd / (n as f64).sqrt();
    assert!((m - 2.0).abs() < 4.0 * oracle_se);
    let e = mc_risk(
        &DecisionRule::james_stein(5).unwrap(),
        &[0.0; 5],
        100_000,
        32,
    )
    .unwrap();
    assert!((e.risk - 2.0).abs() <= 3.0 * e.stderr, "{e:?}");
}

#[test]
fn horseshoe_warm_and_cold_chains_agree() {
    let y = [2.5, -1.0, 0.3, 0.0, 4.0];
    let cfg = HorseshoeConfig {
        iterations: 10_000,
        burn_in: 1000,
        thin: 1,
        seed: 0,
    };
    let warm_from = posterior_mean(
        &[30.0, 0.0, 0.0, 0.0, 0.0],
        &cfg,
        None,
        &mut stream(40, &[]),
    )
    .unwrap()
    .final_state;
    let (mut cold, mut warm) = (Vec::new(), Vec::new());
    for c in 0..20u64 {
        cold.push(
            posterior_mean(&y, &cfg, None, &mut stream(41, &[c]))
                .unwrap()
                .estimate,
        );
        warm.push(
            posterior_mean(&y, &cfg, Some(warm_from.clone()), &mut stream(42, &[c]))
                .unwrap()
                .estimate,
        );
    }
    for i in 0..5 {
        let (mc, sc) = mean_sd(&cold.iter().map(|e| e[i]).collect::<Vec<_>>());
        let (mw, sw) = mean_sd(&warm.iter().map(|e| e[i]).collect::<Vec<_>>());
        let se = ((sc * sc + sw * sw) / 20.0).sqrt();
        assert!(
            (mc - mw).abs() <= 3.0 * se.max(1e-12),
            "coord {i}: {mc} vs {mw} (se {se})"
        );
    }
}

#[test]
fn rao_blackwell_reduces_replicate_variance() {
    let y = [3.0, 0.0, 0.0, 0.0, 0.0];
    let cfg = HorseshoeConfig::default();
    let fits: Vec<_> = (0..50u64)
        .map(|c| posterior_mean(&y, &cfg, None, &mut stream(50, &[c])).unwrap())
        .collect();
    let (_, rb) = mean_sd(&fits.iter().map(|f| f.estimate[0]).collect::<Vec<_>>());
    let (_, raw) = mean_sd(&fits.iter().map(|f| f.raw_estimate[0]).collect::<Vec<_>>());
    assert!(rb < raw, "rb sd {rb} vs raw sd {raw}");
}

#[test]
fn predictive_density_integrates_to_one() {
    // E_{Y ~ p̂_U}[p̂/p̂_U] = E[m(w; v_w)/m(x; v_x)]
    let prob = PredictiveProblem::betaprime(5).unwrap();
    let x = [0.8, -0.4, 1.2, 0.0, 0.5];
    let ln_mx = ln_marginal_density(&x, 1.0, &prob).unwrap();
    let sd = 2f64.sqrt();
    let mut rng = stream(60, &[]);
    let n = 100_000;
    let ratios: Vec<f64> = (0..n)
        .map(|_| {
            let y: Vec<f64> = x
                .iter()
                .map(|xi| xi + sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let w = combined_point(&y, &x, &prob);
            (ln_marginal_density(&w, prob.v_w(), &prob).unwrap() - ln_mx).exp()
        })
        .collect();
    let (m, _) = mean_sd(&ratios);
    assert!((m - 1.0).abs() < 0.01, "∫ p̂ = {m}");
}

#[test]
fn fixed_scale_tail_decays_and_is_stable() {
    let radii: Vec<f64> = (0..=10).map(|i| 20.0 + 10.0 * i as f64).collect();
    let a = build_mixing_sample(&MixingSpec::fixed_reference(), 20_000, 70).unwrap();
    let b = build_mixing_sample(&MixingSpec::fixed_reference(), 40_000, 71).unwrap();
    let fa = tail_decay_probe(&a, 5, 3, &radii).unwrap();
    let fb = tail_decay_probe(&b, 5, 3, &radii).unwrap();
    assert!(fa.slope < 0.0 && fb.slope < 0.0);
    let se = (fa.slope_stderr.powi(2) + fb.slope_stderr.powi(2)).sqrt();
    assert!(
        (fa.slope - fb.slope).abs() <= 2.0 * se,
        "{} vs {} (se {se})",
        fa.slope,
        fb.slope
    );
}
