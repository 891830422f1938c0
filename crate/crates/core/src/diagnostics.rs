//! Numerical checks on the minimaxity machinery: the positivity function
//! `F(λ)`, finite-difference Laplacians of `√m`, and the tail of the
//! fixed-scale marginal.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::mixing::MixingSample;
use crate::predictive::{ln_marginal_density_radial, PredictiveProblem};
use crate::risk::excess_integrand;
use crate::shrinkage::MixturePosterior;
use crate::specialfn::ln_lower_incomplete_gamma;

fn check_f_args(a: f64, lambda: f64) -> Result<()> {
    if !(a >= 3.0) || !a.is_finite() {
        return Err(domain(format!("F needs a ≥ 3, got {a}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(domain(format!("F needs λ > 0, got {lambda}")));
    }
    Ok(())
}

/// `ln F(λ)` with `F(λ) = λ^a e^{−λ} + (2λ − a) γ(a, λ)`.
///
/// Below `λ = a + 1` the two terms nearly cancel, so `F` is summed from the
/// positive series `λ^a e^{−λ} Σ_k (a+2k+2) λ^{k+1} / (a(a+1)⋯(a+k+1))`,
/// which follows from expanding `γ(a, λ)`. Above it both terms are positive
/// and are combined in log space.
pub fn ln_superharmonic_f(a: f64, lambda: f64) -> Result<f64> {
    check_f_args(a, lambda)?;
    let lead = a * lambda.ln() - lambda;
    if lambda < a + 1.0 {
        let mut term = lambda / (a * (a + 1.0));
        let mut sum = (a + 2.0) * term;
        for k in 1..2000 {
            let kf = k as f64;
            term *= lambda / (a + kf + 1.0);
            let add = (a + 2.0 * kf + 2.0) * term;
            sum += add;
            if add < 1e-17 * sum {
                break;
            }
        }
        Ok(lead + sum.ln())
    } else {
        let second = (2.0 * lambda - a).ln() + ln_lower_incomplete_gamma(a, lambda)?;
        let hi = lead.max(second);
        Ok(hi + ((lead - hi).exp() + (second - hi).exp()).ln())
    }
}

pub fn superharmonic_f(a: f64, lambda: f64) -> Result<f64> {
    Ok(ln_superharmonic_f(a, lambda)?.exp())
}

/// `F′(λ) = λ^a e^{−λ} + 2γ(a, λ)`.
pub fn superharmonic_f_prime(a: f64, lambda: f64) -> Result<f64> {
    check_f_args(a, lambda)?;
    let lead = a * lambda.ln() - lambda;
    Ok(lead.exp() + 2.0 * ln_lower_incomplete_gamma(a, lambda)?.exp())
}

/// `n` points spaced evenly in `log10` between `lo` and `hi`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| match i {
                0 => lo,
                _ if i + 1 == n => hi,
                _ => 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64),
            })
            .collect(),
    }
}

/// Outcome of the positivity and monotonicity sweep for one `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct FSweep {
    pub a: f64,
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub all_positive: bool,
    pub increasing: bool,
}

pub fn sweep_f(a: f64, lambdas: &[f64]) -> Result<FSweep> {
    let values = lambdas
        .iter()
        .map(|&l| superharmonic_f(a, l))
        .collect::<Result<Vec<_>>>()?;
    let all_positive = values.iter().all(|v| *v > 0.0);
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    Ok(FSweep {
        a,
        lambdas: lambdas.to_vec(),
        values,
        all_positive,
        increasing,
    })
}

/// A radial function sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub r_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub p: usize,
    pub h: f64,
}

impl RadialProfile {
    pub fn new(r_grid: Vec<f64>, values: Vec<f64>, p: usize) -> Result<Self> {
        if r_grid.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: r_grid.len(),
                actual: values.len(),
            });
        }
        if r_grid.len() < 3 {
            return Err(domain("a profile needs at least three nodes"));
        }
        if !(r_grid[0] > 0.0) || r_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain(
                "radial grid must be positive and strictly increasing",
            ));
        }
        let h = (r_grid[r_grid.len() - 1] - r_grid[0]) / (r_grid.len() - 1) as f64;
        Ok(Self {
            r_grid,
            values,
            p,
            h,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(r_grid: Vec<f64>, p: usize, f: F) -> Result<Self> {
        let values = r_grid.iter().map(|&r| f(r)).collect();
        Self::new(r_grid, values, p)
    }
}

/// `φ″(r) + (p−1)/r · φ′(r)` by central differences at an interior node.
pub fn radial_laplacian(profile: &RadialProfile, index: usize) -> f64 {
    let (v, h) = (&profile.values, profile.h);
    let d2 = (v[index + 1] - 2.0 * v[index] + v[index - 1]) / (h * h);
    let d1 = (v[index + 1] - v[index - 1]) / (2.0 * h);
    d2 + (profile.p as f64 - 1.0) / profile.r_grid[index] * d1
}

/// [`radial_laplacian`] applied to a profile that already holds `√m`.
pub fn radial_laplacian_sqrt(profile: &RadialProfile, index: usize) -> f64 {
    radial_laplacian(profile, index)
}

/// Differencing step `10⁻³ · max(1, r)`.
pub fn laplacian_step(r: f64) -> f64 {
    1e-3 * r.max(1.0)
}

/// `Δ√m` at each radius from a local three-point stencil of the quadrature
/// marginal `m(·; 1)`.
pub fn marginal_sqrt_laplacian(problem: &PredictiveProblem, radii: &[f64]) -> Result<Vec<f64>> {
    radii
        .par_iter()
        .map(|&r| {
            if !(r > 0.0) {
                return Err(domain(format!("radius must be positive, got {r}")));
            }
            let h = laplacian_step(r);
            let nodes = vec![r - h, r, r + h];
            let values = nodes
                .iter()
                .map(|&x| Ok((0.5 * ln_marginal_density_radial(x * x, 1.0, problem)?).exp()))
                .collect::<Result<Vec<_>>>()?;
            let profile = RadialProfile {
                r_grid: nodes,
                values,
                p: problem.p,
                h,
            };
            Ok(radial_laplacian_sqrt(&profile, 1))
        })
        .collect()
}

/// `Δ√m / √m = B(‖y‖²)/4` for a Gaussian variance mixture, evaluated from a
/// mixing sample at `u = r²`. Exact in `r`, so no differencing is needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplacianProbe {
    pub r: f64,
    pub relative_laplacian: f64,
    /// `ln √m(r)`; `Δ√m = relative_laplacian · exp(ln_sqrt_m)`.
    pub ln_sqrt_m: f64,
}

pub fn mixture_sqrt_laplacian(
    sample: &MixingSample,
    p: usize,
    radii: &[f64],
) -> Result<Vec<LaplacianProbe>> {
    let post = MixturePosterior::new(sample.draws(), p)?;
    radii
        .par_iter()
        .map(|&r| {
            let u = r * r;
            let e = post.eval(u)?;
            let b = excess_integrand(p, u, e.psi, e.psi_prime);
            Ok(LaplacianProbe {
                r,
                relative_laplacian: 0.25 * b,
                ln_sqrt_m: 0.5 * ln_mixture_marginal(sample.draws(), p, r),
            })
        })
        .collect()
}

/// `ln` of the sample average of `(2π(1+V))^{−p/2} exp{−r²/(2(1+V))}`.
pub fn ln_mixture_marginal(draws: &[f64], p: usize, r: f64) -> f64 {
    let pf = p as f64;
    let terms = draws
        .iter()
        .map(|v| -0.5 * pf * (2.0 * PI * (1.0 + v)).ln() - 0.5 * r * r / (1.0 + v));
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + (terms.map(|t| (t - max).exp()).sum::<f64>() / draws.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    /// Spread of the slope across disjoint batches of the sample.
    pub slope_stderr: f64,
    pub ln_m: Vec<f64>,
}

const TAIL_BATCHES: usize = 10;

fn least_squares(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("regressor has no spread".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fit `ln m̂(r) ≈ intercept + slope · r^{2/d}` over the given radii.
pub fn tail_decay_probe(
    sample: &MixingSample,
    p: usize,
    d: usize,
    r_values: &[f64],
) -> Result<TailFit> {
    if d == 0 || p == 0 {
        return Err(domain("depth and dimension must be positive"));
    }
    if r_values.len() < 2 || r_values.windows(2).any(|w| !(w[1] > w[0])) || r_values[0] < 0.0 {
        return Err(domain("need at least two increasing nonnegative radii"));
    }
    let draws = sample.draws();
    let x: Vec<f64> = r_values.iter().map(|r| r.powf(2.0 / d as f64)).collect();
    let fit = |draws: &[f64]| -> Result<(f64, f64, Vec<f64>)> {
        let ln_m: Vec<f64> = r_values
            .iter()
            .map(|&r| ln_mixture_marginal(draws, p, r))
            .collect();
        if ln_m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("marginal estimate underflowed".into()));
        }
        let (s, i) = least_squares(&x, &ln_m)?;
        Ok((s, i, ln_m))
    };
    let (slope, intercept, ln_m) = fit(draws)?;
    let slope_stderr = if draws.len() >= 2 * TAIL_BATCHES {
        let size = draws.len() / TAIL_BATCHES;
        let slopes = (0..TAIL_BATCHES)
            .map(|b| fit(&draws[b * size..(b + 1) * size]).map(|f| f.0))
            .collect::<Result<Vec<_>>>()?;
        let mean = slopes.iter().sum::<f64>() / TAIL_BATCHES as f64;
        let var =
            slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (TAIL_BATCHES - 1) as f64;
        // batch spread of a size-M/B fit, rescaled to the full sample
        (var / TAIL_BATCHES as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(TailFit {
        slope,
        intercept,
        slope_stderr,
        ln_m,
    })
}
