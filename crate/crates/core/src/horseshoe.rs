//! Horseshoe posterior mean in the normal means model with unit noise.
//!
//! Half-Cauchy scales are written as inverse-gamma mixtures
//! (`λ² | ν ~ IG(½, 1/ν)`, `ν ~ IG(½, 1)`, likewise for `τ²` with `ξ`), which
//! makes every full conditional conjugate.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};
use crate::specialfn::sample_gamma_unchecked;

const VARIANCE_FLOOR: f64 = 1e-300;
const VARIANCE_CEIL: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HorseshoeConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for HorseshoeConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            burn_in: 1000,
            thin: 2,
            seed: 0,
        }
    }
}

impl HorseshoeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidSpec(format!(
                "burn-in ({}) must be below the iteration count ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidSpec(
                "thinning interval must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of sweeps that contribute to the estimate.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    fn keeps(&self, t: usize) -> bool {
        t >= self.burn_in && (t - self.burn_in).is_multiple_of(self.thin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeState {
    pub theta: Vec<f64>,
    pub lambda_sq: Vec<f64>,
    pub tau_sq: f64,
    pub nu: Vec<f64>,
    pub xi: f64,
}

impl HorseshoeState {
    /// `θ = y` with every scale and auxiliary at 1.
    pub fn cold(y: &[f64]) -> Self {
        let p = y.len();
        Self {
            theta: y.to_vec(),
            lambda_sq: vec![1.0; p],
            tau_sq: 1.0,
            nu: vec![1.0; p],
            xi: 1.0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.theta.len()
    }

    fn check(&self, p: usize) -> Result<()> {
        for len in [self.theta.len(), self.lambda_sq.len(), self.nu.len()] {
            if len != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: len,
                });
            }
        }
        let positive = |x: &f64| *x > 0.0 && x.is_finite();
        if !(self.lambda_sq.iter().all(positive) && self.nu.iter().all(positive))
            || !positive(&self.tau_sq)
            || !positive(&self.xi)
        {
            return Err(domain(
                "horseshoe variance components must be positive and finite",
            ));
        }
        Ok(())
    }

    /// Conditional posterior variance `v_i = λ_i²τ² / (1 + λ_i²τ²)`.
    pub fn shrink_weight(&self, i: usize) -> f64 {
        let g = self.lambda_sq[i] * self.tau_sq;
        if g.is_infinite() {
            1.0
        } else {
            g / (1.0 + g)
        }
    }
}

/// `b / G` with `G ~ Gamma(shape, 1)`, kept inside `[1e-300, 1e300]`.
fn inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    (scale / sample_gamma_unchecked(shape, rng)).clamp(VARIANCE_FLOOR, VARIANCE_CEIL)
}

fn sweep<R: Rng + ?Sized>(state: &mut HorseshoeState, y: &[f64], rng: &mut R) {
    let p = y.len();
    for (i, &yi) in y.iter().enumerate() {
        let v = state.shrink_weight(i);
        let z: f64 = rng.sample(StandardNormal);
        state.theta[i] = v * yi + v.sqrt() * z;
    }
    for i in 0..p {
        let th2 = state.theta[i] * state.theta[i];
        state.lambda_sq[i] = inv_gamma(1.0, 1.0 / state.nu[i] + th2 / (2.0 * state.tau_sq), rng);
        state.nu[i] = inv_gamma(1.0, 1.0 + 1.0 / state.lambda_sq[i], rng);
    }
    let ss: f64 = state
        .theta
        .iter()
        .zip(&state.lambda_sq)
        .map(|(t, l)| t * t / l)
        .sum();
    state.tau_sq = inv_gamma(0.5 * (p as f64 + 1.0), 1.0 / state.xi + 0.5 * ss, rng);
    state.xi = inv_gamma(1.0, 1.0 + 1.0 / state.tau_sq, rng);
}

/// One Gibbs sweep: `θ`, then `λ²` and `ν`, then `τ²` and `ξ`.
pub fn gibbs_step<R: Rng + ?Sized>(
    state: &HorseshoeState,
    y: &[f64],
    rng: &mut R,
) -> Result<HorseshoeState> {
    state.check(y.len())?;
    let mut next = state.clone();
    sweep(&mut next, y, rng);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeFit {
    /// Average of the conditional means `v_i y_i` over retained sweeps.
    pub estimate: Vec<f64>,
    /// Average of the sampled `θ` over the same sweeps, kept for comparison.
    pub raw_estimate: Vec<f64>,
    pub final_state: HorseshoeState,
}

/// Run a chain at `y` and return the Rao-Blackwellized posterior mean.
///
/// A `warm_start` replaces the cold initialization; its `θ` is overwritten by
/// the first sweep so only the scales matter.
pub fn posterior_mean<R: Rng + ?Sized>(
    y: &[f64],
    config: &HorseshoeConfig,
    warm_start: Option<HorseshoeState>,
    rng: &mut R,
) -> Result<HorseshoeFit> {
    config.validate()?;
    if y.is_empty() {
        return Err(domain("horseshoe needs at least one coordinate"));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(domain(format!("observation must be finite, found {v}")));
    }
    let p = y.len();
    let mut state = match warm_start {
        Some(s) => {
            s.check(p)?;
            s
        }
        None => HorseshoeState::cold(y),
    };
    let mut rb = vec![0.0; p];
    let mut raw = vec![0.0; p];
    let mut kept = 0usize;
    for t in 0..config.iterations {
        sweep(&mut state, y, rng);
        if config.keeps(t) {
            for i in 0..p {
                rb[i] += state.shrink_weight(i) * y[i];
                raw[i] += state.theta[i];
            }
            kept += 1;
        }
    }
    let n = kept as f64;
    rb.iter_mut().for_each(|x| *x /= n);
    raw.iter_mut().for_each(|x| *x /= n);
    Ok(HorseshoeFit {
        estimate: rb,
        raw_estimate: raw,
        final_state: state,
    })
}
