//! Bayes predictive densities under Kullback–Leibler loss.
//!
//! Past data `X ~ N(θ, v_x I)`, future `Y ~ N(θ, v_y I)`. The Bayes predictive
//! density is the uniform-prior density `p̂_U(y | x)` reweighted by a ratio of
//! prior marginals, so the prior's normalizing constant never enters.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::mixing::MixingSpec;
use crate::quadrature::{integrate, QuadratureOptions};
use crate::risk::RiskEstimate;
use crate::rng::stream;

/// Prior on `θ` as a Gaussian scale mixture `θ | W ~ N(0, W I)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictivePrior {
    /// `W = scale · B` with `B ~ BetaPrime(1, p/2 − 2)`.
    BetaPrime { scale: f64 },
    /// `θ ~ N(0, variance · I)`; variance 0 puts all mass at the origin.
    PointMass { variance: f64 },
}

impl PredictivePrior {
    pub fn from_spec(spec: &MixingSpec) -> Result<Self> {
        match spec {
            MixingSpec::BetaPrime { .. } => Ok(Self::BetaPrime { scale: 1.0 }),
            MixingSpec::PointMass { variance } => Ok(Self::PointMass {
                variance: *variance,
            }),
            other => Err(Error::InvalidSpec(format!(
                "no tractable marginal for {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveProblem {
    pub p: usize,
    pub v_x: f64,
    pub v_y: f64,
    pub prior: PredictivePrior,
}

impl PredictiveProblem {
    pub fn new(p: usize, v_x: f64, v_y: f64, prior: PredictivePrior) -> Result<Self> {
        let problem = Self { p, v_x, v_y, prior };
        problem.validate()?;
        Ok(problem)
    }

    /// BetaPrime prior with unit scale and `v_x = v_y = 1`.
    pub fn betaprime(p: usize) -> Result<Self> {
        Self::new(p, 1.0, 1.0, PredictivePrior::BetaPrime { scale: 1.0 })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_x > 0.0 && self.v_y > 0.0 && self.v_x.is_finite() && self.v_y.is_finite()) {
            return Err(domain(format!(
                "variances must be positive, got v_x={} v_y={}",
                self.v_x, self.v_y
            )));
        }
        match self.prior {
            PredictivePrior::BetaPrime { scale } => {
                if self.p < 5 {
                    return Err(domain(format!(
                        "BetaPrime prior needs p ≥ 5, got {}",
                        self.p
                    )));
                }
                if !(scale > 0.0) || !scale.is_finite() {
                    return Err(domain(format!("prior scale must be positive, got {scale}")));
                }
            }
            PredictivePrior::PointMass { variance } => {
                if self.p == 0 {
                    return Err(domain("dimension must be positive"));
                }
                if !(variance >= 0.0) || !variance.is_finite() {
                    return Err(domain(format!(
                        "point-mass variance must be nonnegative, got {variance}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `v_w = v_x v_y / (v_x + v_y)`.
    pub fn v_w(&self) -> f64 {
        self.v_x * self.v_y / (self.v_x + self.v_y)
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                actual: z.len(),
            });
        }
        Ok(())
    }
}

fn norm_sq(z: &[f64]) -> f64 {
    z.iter().map(|x| x * x).sum()
}

const MARGINAL_OPTS: QuadratureOptions = QuadratureOptions {
    rel_tol: 1e-13,
    abs_tol: 0.0,
    max_intervals: 4000,
};

/// `ln m(z; v)` for `‖z‖² = s`, where `m` is the density of `θ + √v·Z`.
///
/// For the BetaPrime prior with scale `c` and `b = p/2 − 2`, substituting
/// `t = 1/(v + w)` turns the mixing integral into
/// `(2π)^{−p/2} b c^b ∫₀^{1/v} t^{p−3} e^{−st/2} (1 + t(c − v))^{−(b+1)} dt`.
pub fn ln_marginal_density_radial(s: f64, v: f64, problem: &PredictiveProblem) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(domain(format!(
            "marginal variance must be positive, got {v}"
        )));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return Err(domain(format!(
            "squared norm must be finite and nonnegative, got {s}"
        )));
    }
    problem.validate()?;
    let pf = problem.p as f64;
    match problem.prior {
        PredictivePrior::PointMass { variance } => {
            let tot = v + variance;
            Ok(-0.5 * pf * (2.0 * PI * tot).ln() - 0.5 * s / tot)
        }
        PredictivePrior::BetaPrime { scale: c } => {
            let b = 0.5 * pf - 2.0;
            let top = 1.0 / v;
            // integrand peaks near t* = 2(p−3)/s; factor the peak value out
            let t_peak = if s > 0.0 {
                (2.0 * (pf - 3.0) / s).min(top)
            } else {
                top
            };
            let log_f =
                |t: f64| (pf - 3.0) * t.ln() - 0.5 * s * t - (b + 1.0) * (t * (c - v)).ln_1p();
            let ref_log = log_f(t_peak);
            let f = |t: f64| {
                if t > 0.0 {
                    (log_f(t) - ref_log).exp()
                } else {
                    0.0
                }
            };
            let mut cuts = vec![0.0];
            let mut k = t_peak / 8.0;
            while k < top && cuts.len() < 12 {
                cuts.push(k);
                k *= 4.0;
            }
            cuts.push(top);
            let mut total = 0.0;
            for w in cuts.windows(2) {
                total += integrate(f, w[0], w[1], MARGINAL_OPTS)?.value;
            }
            if !(total > 0.0) {
                return Err(Error::Degenerate(format!(
                    "marginal integral vanished at s={s}, v={v}"
                )));
            }
            Ok(-0.5 * pf * (2.0 * PI).ln() + b.ln() + b * c.ln() + ref_log + total.ln())
        }
    }
}

pub fn ln_marginal_density(z: &[f64], v: f64, problem: &PredictiveProblem) -> Result<f64> {
    problem.check_len(z)?;
    ln_marginal_density_radial(norm_sq(z), v, problem)
}

pub fn marginal_density(z: &[f64], v: f64, problem: &PredictiveProblem) -> Result<f64> {
    Ok(ln_marginal_density(z, v, problem)?.exp())
}

/// `ln p̂_U(y | x)`, the `N(x, (v_x + v_y) I)` density.
pub fn ln_uniform_predictive(y: &[f64], x: &[f64], problem: &PredictiveProblem) -> Result<f64> {
    problem.check_len(y)?;
    problem.check_len(x)?;
    let tot = problem.v_x + problem.v_y;
    let d: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-0.5 * problem.p as f64 * (2.0 * PI * tot).ln() - 0.5 * d / tot)
}

/// Mixing point `w = (v_y x + v_x y) / (v_x + v_y)`.
pub fn combined_point(y: &[f64], x: &[f64], problem: &PredictiveProblem) -> Vec<f64> {
    let tot = problem.v_x + problem.v_y;
    y.iter()
        .zip(x)
        .map(|(yi, xi)| (problem.v_y * xi + problem.v_x * yi) / tot)
        .collect()
}

/// `ln p̂(y | x) = ln m(w; v_w) − ln m(x; v_x) + ln p̂_U(y | x)`.
pub fn ln_predictive_density(y: &[f64], x: &[f64], problem: &PredictiveProblem) -> Result<f64> {
    let lu = ln_uniform_predictive(y, x, problem)?;
    let w = combined_point(y, x, problem);
    Ok(ln_marginal_density(&w, problem.v_w(), problem)?
        - ln_marginal_density(x, problem.v_x, problem)?
        + lu)
}

pub fn predictive_density(y: &[f64], x: &[f64], problem: &PredictiveProblem) -> Result<f64> {
    Ok(ln_predictive_density(y, x, problem)?.exp())
}

/// Which density estimate `kl_risk_mc` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictiveRule {
    Bayes,
    Uniform,
    /// The true `p(· | θ)`; its risk is zero.
    Oracle,
}

impl PredictiveRule {
    pub fn label(&self) -> &'static str {
        match self {
            PredictiveRule::Bayes => "bayes",
            PredictiveRule::Uniform => "uniform",
            PredictiveRule::Oracle => "oracle",
        }
    }
}

fn ln_true_density(y: &[f64], theta: &[f64], v_y: f64) -> f64 {
    let d: f64 = y.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * y.len() as f64 * (2.0 * PI * v_y).ln() - 0.5 * d / v_y
}

/// `(p/2) ln(1 + v_x/v_y)`, the constant KL risk of `p̂_U`.
pub fn uniform_kl_risk(problem: &PredictiveProblem) -> f64 {
    0.5 * problem.p as f64 * (problem.v_x / problem.v_y).ln_1p()
}

/// Nested Monte Carlo KL risk: `n_outer` draws of `X`, each scored by the
/// average log ratio over `n_inner` draws of `Y`. The stderr comes from the
/// spread of the outer averages.
pub fn kl_risk_mc(
    problem: &PredictiveProblem,
    rule: PredictiveRule,
    theta: &[f64],
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    problem.validate()?;
    problem.check_len(theta)?;
    if n_outer < 2 || n_inner < 2 {
        return Err(domain(format!(
            "need at least 2 outer and inner draws, got {n_outer} and {n_inner}"
        )));
    }
    let (sx, sy) = (problem.v_x.sqrt(), problem.v_y.sqrt());
    let outer = (0..n_outer)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            let x: Vec<f64> = theta
                .iter()
                .map(|t| t + sx * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let ln_mx = match rule {
                PredictiveRule::Bayes => ln_marginal_density(&x, problem.v_x, problem)?,
                _ => 0.0,
            };
            let mut acc = 0.0;
            for _ in 0..n_inner {
                let y: Vec<f64> = theta
                    .iter()
                    .map(|t| t + sy * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let truth = ln_true_density(&y, theta, problem.v_y);
                let est = match rule {
                    PredictiveRule::Oracle => truth,
                    PredictiveRule::Uniform => ln_uniform_predictive(&y, &x, problem)?,
                    PredictiveRule::Bayes => {
                        let w = combined_point(&y, &x, problem);
                        ln_marginal_density(&w, problem.v_w(), problem)? - ln_mx
                            + ln_uniform_predictive(&y, &x, problem)?
                    }
                };
                acc += truth - est;
            }
            Ok(acc / n_inner as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = n_outer as f64;
    let mean = outer.iter().sum::<f64>() / n;
    let var = outer.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(RiskEstimate {
        risk: mean,
        stderr: (var / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit5() -> PredictiveProblem {
        PredictiveProblem::betaprime(5).unwrap()
    }

    /// `∫₀^∞ (2π(v+w))^{−p/2} e^{−s/(2(v+w))} b(1+w)^{−(b+1)} dw`, taken
    /// on `[0, 1]` directly and on `[1, ∞)` through `w = 1/u`.
    fn brute_marginal(s: f64, v: f64, p: usize) -> f64 {
        let pf = p as f64;
        let b = pf / 2.0 - 2.0;
        let g = |w: f64| {
            (2.0 * PI * (v + w)).powf(-pf / 2.0)
                * (-s / (2.0 * (v + w))).exp()
                * b
                * (1.0 + w).powf(-(b + 1.0))
        };
        let opts = QuadratureOptions {
            rel_tol: 1e-12,
            abs_tol: 0.0,
            max_intervals: 20_000,
        };
        let head = integrate(g, 0.0, 1.0, opts).unwrap().value;
        let tail = integrate(
            |u: f64| if u > 0.0 { g(1.0 / u) / (u * u) } else { 0.0 },
            0.0,
            1.0,
            opts,
        )
        .unwrap()
        .value;
        head + tail
    }

    #[test]
    fn marginal_matches_untransformed_integral() {
        let prob = unit5();
        for &(s, v) in &[
            (0.0, 1.0),
            (1.0, 1.0),
            (25.0, 0.5),
            (400.0, 2.0),
            (0.3, 0.25),
        ] {
            let got = ln_marginal_density_radial(s, v, &prob).unwrap().exp();
            let want = brute_marginal(s, v, 5);
            assert!(
                (got / want - 1.0).abs() < 1e-9,
                "s={s} v={v}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn unit_marginal_at_origin() {
        // (2π)^{−5/2} · b · ∫₀¹ u² du with b = 1/2
        let got = ln_marginal_density_radial(0.0, 1.0, &unit5())
            .unwrap()
            .exp();
        let want = (2.0 * PI).powf(-2.5) * 0.5 / 3.0;
        assert!((got / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_is_radial_and_decreasing() {
        let prob = unit5();
        let z = [1.0, -2.0, 0.5, 0.0, 3.0];
        let zr = [0.0, 0.0, -(norm_sq(&z)).sqrt(), 0.0, 0.0];
        let a = marginal_density(&z, 1.0, &prob).unwrap();
        let b = marginal_density(&zr, 1.0, &prob).unwrap();
        assert!((a / b - 1.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let r = 0.25 * i as f64;
            let m = ln_marginal_density_radial(r * r, 1.0, &prob).unwrap();
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn marginal_bounded_by_noise_peak() {
        let prob = unit5();
        for v in [0.1, 1.0, 7.0] {
            let cap = -2.5 * (2.0 * PI * v).ln();
            for r in [0.0, 0.5, 3.0, 40.0] {
                assert!(ln_marginal_density_radial(r * r, v, &prob).unwrap() <= cap);
            }
        }
    }

    #[test]
    fn uniform_factor_at_coincidence() {
        let prob = unit5();
        let x = [0.2, 0.1, -1.0, 4.0, 0.0];
        let lu = ln_uniform_predictive(&x, &x, &prob).unwrap();
        assert!((lu + 2.5 * (4.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn gaussian_prior_gives_conjugate_predictive() {
        for v0 in [0.0, 2.0] {
            let prob =
                PredictiveProblem::new(3, 1.5, 0.5, PredictivePrior::PointMass { variance: v0 })
                    .unwrap();
            let x = [1.0, -0.5, 2.0];
            let y = [0.3, 0.7, 1.1];
            let shrink = v0 / (v0 + prob.v_x);
            let var = shrink * prob.v_x + prob.v_y;
            let d: f64 = y
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - shrink * b).powi(2))
                .sum();
            let want = -1.5 * (2.0 * PI * var).ln() - 0.5 * d / var;
            let got = ln_predictive_density(&y, &x, &prob).unwrap();
            assert!((got - want).abs() < 1e-12, "v0={v0}: {got} vs {want}");
        }
    }

    #[test]
    fn predictive_positive_far_out() {
        let prob = unit5();
        let x = [0.5, 0.0, 0.0, -1.0, 0.0];
        for d in [0.0, 1.0, 10.0, 50.0, 100.0] {
            let y = [0.5 + d, 0.0, 0.0, -1.0, 0.0];
            let l = ln_predictive_density(&y, &x, &prob).unwrap();
            assert!(l.is_finite());
        }
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(PredictiveProblem::betaprime(4).is_err());
        assert!(
            PredictiveProblem::new(5, 0.0, 1.0, PredictivePrior::BetaPrime { scale: 1.0 }).is_err()
        );
        assert!(
            PredictiveProblem::new(5, 1.0, 1.0, PredictivePrior::BetaPrime { scale: -1.0 })
                .is_err()
        );
        assert!(ln_marginal_density(&[0.0; 4], 1.0, &unit5()).is_err());
        assert!(ln_marginal_density(&[0.0; 5], 0.0, &unit5()).is_err());
        assert!(PredictivePrior::from_spec(&MixingSpec::fixed_reference()).is_err());
    }

    #[test]
    fn oracle_and_uniform_risks() {
        let prob = unit5();
        let theta = [1.0, 0.0, -2.0, 0.5, 0.0];
        let o = kl_risk_mc(&prob, PredictiveRule::Oracle, &theta, 20, 5, 1).unwrap();
        assert_eq!(o.risk, 0.0);
        let u = kl_risk_mc(&prob, PredictiveRule::Uniform, &theta, 2000, 20, 2).unwrap();
        assert!(
            (u.risk - uniform_kl_risk(&prob)).abs() <= 3.0 * u.stderr,
            "{u:?}"
        );
    }
}
