//! Monte Carlo quadratic risk, SURE and sparse signal grids.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::estimators::{DecisionRule, RuleForm};
use crate::horseshoe::{posterior_mean, HorseshoeState};
use crate::mixing::SAMPLE_CHUNK;
use crate::rng::{derive_seed, stream, SimRng};

/// Replications per warm-started horseshoe chain. Each batch runs on its own
/// stream, so a batch is the unit of parallelism.
pub const HORSESHOE_BATCH: usize = 25;

const DIRECTION_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub risk: f64,
    pub stderr: f64,
}

/// Streaming mean and sum of squared deviations, merged pairwise.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }

    fn estimate(&self) -> RiskEstimate {
        let var = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        };
        RiskEstimate {
            risk: self.mean,
            stderr: (var / self.n as f64).sqrt(),
        }
    }
}

/// Split `n` replications into fixed-size chunks, run each on stream
/// `(seed, chunk)` and merge in chunk order.
fn chunked<F>(n: usize, chunk: usize, seed: u64, body: F) -> Result<RiskEstimate>
where
    F: Fn(&mut SimRng, usize, &mut Moments) -> Result<()> + Sync,
{
    let chunks = n.div_ceil(chunk);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[c as u64]);
            let mut m = Moments::default();
            body(&mut rng, chunk.min(n - c * chunk), &mut m)?;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts
        .into_iter()
        .fold(Moments::default(), Moments::merge)
        .estimate())
}

fn noisy<R: Rng + ?Sized>(theta: &[f64], rng: &mut R) -> Vec<f64> {
    theta
        .iter()
        .map(|t| t + rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Risk of an arbitrary estimator `y ↦ δ(y)`, one fresh `Y = θ + Z` per draw.
pub fn mc_risk_with<F>(theta: &[f64], n_mc: usize, seed: u64, estimator: F) -> Result<RiskEstimate>
where
    F: Fn(&[f64], &mut SimRng) -> Result<Vec<f64>> + Sync,
{
    if n_mc < 2 {
        return Err(domain(format!(
            "need at least 2 Monte Carlo draws, got {n_mc}"
        )));
    }
    chunked(n_mc, SAMPLE_CHUNK, seed, |rng, count, m| {
        for _ in 0..count {
            let y = noisy(theta, rng);
            m.push(sq_dist(&estimator(&y, rng)?, theta));
        }
        Ok(())
    })
}

/// Mean and standard error of `‖δ(Y) − θ‖²` over `n_mc` draws.
///
/// Horseshoe replications warm-start each chain from the previous one's final
/// scales within batches of [`HORSESHOE_BATCH`].
pub fn mc_risk(rule: &DecisionRule, theta: &[f64], n_mc: usize, seed: u64) -> Result<RiskEstimate> {
    if let Some(p) = rule.dimension() {
        if theta.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: theta.len(),
            });
        }
    }
    match &rule.form {
        RuleForm::Horseshoe(cfg) => {
            if n_mc < 2 {
                return Err(domain(format!(
                    "need at least 2 Monte Carlo draws, got {n_mc}"
                )));
            }
            chunked(n_mc, HORSESHOE_BATCH, seed, |rng, count, m| {
                let mut state: Option<HorseshoeState> = None;
                for _ in 0..count {
                    let y = noisy(theta, rng);
                    let fit = posterior_mean(&y, cfg, state.take(), rng)?;
                    m.push(sq_dist(&fit.estimate, theta));
                    state = Some(fit.final_state);
                }
                Ok(())
            })
        }
        _ => mc_risk_with(theta, n_mc, seed, |y, _| rule.apply(y, None)),
    }
}

/// Seed of the `(r-index, direction-index)` task.
pub fn task_seed(seed: u64, r_index: usize, dir_index: usize) -> u64 {
    derive_seed(seed, &[r_index as u64, dir_index as u64])
}

/// Uniform point on the unit sphere from the task's direction stream.
pub fn random_direction(p: usize, task: u64) -> Vec<f64> {
    let mut rng = stream(task, &[DIRECTION_TAG]);
    loop {
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return z.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve {
    pub p: usize,
    pub r_grid: Vec<f64>,
    pub k: Option<usize>,
    pub risks: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub rule: String,
    pub n_mc: usize,
    pub k_dir: usize,
    pub seed: u64,
}

pub const RISK_CSV_HEADER: &str = "r,k,risk,stderr,rule,p,N_mc,K_dir,seed";

impl RiskCurve {
    pub fn len(&self) -> usize {
        self.r_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_grid.is_empty()
    }

    /// Data rows without a header, so several curves can share one file.
    pub fn write_rows<W: Write>(&self, out: &mut W) -> Result<()> {
        let k = self.k.map(|k| k.to_string()).unwrap_or_default();
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.r_grid[i],
                k,
                self.risks[i],
                self.stderrs[i],
                self.rule,
                self.p,
                self.n_mc,
                self.k_dir,
                self.seed
            )?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{RISK_CSV_HEADER}")?;
        self.write_rows(&mut out)
    }
}

fn check_grid(r_grid: &[f64]) -> Result<()> {
    if let Some(r) = r_grid.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
        return Err(domain(format!(
            "signal norms must be finite and nonnegative, got {r}"
        )));
    }
    Ok(())
}

/// Risk against `‖θ‖ = r`, averaged over `k_dir` random directions per `r`.
///
/// The standard error adds the between-direction spread to the within-run
/// error by the law of total variance. At `r = 0` a single run is used.
pub fn risk_curve(
    rule: &DecisionRule,
    p: usize,
    r_grid: &[f64],
    k_dir: usize,
    n_mc: usize,
    seed: u64,
) -> Result<RiskCurve> {
    if k_dir == 0 {
        return Err(domain("need at least one direction"));
    }
    if p == 0 {
        return Err(domain("dimension must be positive"));
    }
    check_grid(r_grid)?;
    let tasks: Vec<(usize, usize)> = r_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &r)| (0..if r == 0.0 { 1 } else { k_dir }).map(move |j| (i, j)))
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(i, j)| {
            let task = task_seed(seed, i, j);
            let theta: Vec<f64> = random_direction(p, task)
                .into_iter()
                .map(|u| r_grid[i] * u)
                .collect();
            mc_risk(rule, &theta, n_mc, task)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut risks = Vec::with_capacity(r_grid.len());
    let mut stderrs = Vec::with_capacity(r_grid.len());
    let mut at = 0;
    for &r in r_grid {
        let k = if r == 0.0 { 1 } else { k_dir };
        let group = &results[at..at + k];
        at += k;
        let kf = k as f64;
        let mean = group.iter().map(|e| e.risk).sum::<f64>() / kf;
        let within = group.iter().map(|e| e.stderr * e.stderr).sum::<f64>() / kf;
        let between = if k > 1 {
            let s2 = group.iter().map(|e| (e.risk - mean).powi(2)).sum::<f64>() / (kf - 1.0);
            (s2 - within).max(0.0)
        } else {
            0.0
        };
        risks.push(mean);
        stderrs.push(((within + between) / kf).sqrt());
    }
    Ok(RiskCurve {
        p,
        r_grid: r_grid.to_vec(),
        k: None,
        risks,
        stderrs,
        rule: rule.label.clone(),
        n_mc,
        k_dir,
        seed,
    })
}

/// Risk along the sparse signals `θ_{r,k}`; no direction averaging.
pub fn sparse_risk_curve(
    rule: &DecisionRule,
    p: usize,
    k: usize,
    r_grid: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<RiskCurve> {
    check_grid(r_grid)?;
    let thetas = r_grid
        .iter()
        .map(|&r| sparse_theta(r, k, p))
        .collect::<Result<Vec<_>>>()?;
    let results = thetas
        .par_iter()
        .enumerate()
        .map(|(i, theta)| mc_risk(rule, theta, n_mc, task_seed(seed, i, 0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskCurve {
        p,
        r_grid: r_grid.to_vec(),
        k: Some(k),
        risks: results.iter().map(|e| e.risk).collect(),
        stderrs: results.iter().map(|e| e.stderr).collect(),
        rule: rule.label.clone(),
        n_mc,
        k_dir: 1,
        seed,
    })
}

/// `(r/√k, …, r/√k, 0, …, 0)` with `k` nonzero entries.
pub fn sparse_theta(r: f64, k: usize, p: usize) -> Result<Vec<f64>> {
    if k == 0 || k > p {
        return Err(domain(format!(
            "sparsity level must lie in 1..={p}, got {k}"
        )));
    }
    let c = r / (k as f64).sqrt();
    Ok((0..p).map(|i| if i < k { c } else { 0.0 }).collect())
}

/// `{1, 2, 5, 10, ⌊p/10⌋, ⌊p/5⌋, ⌊p/2⌋, p}` restricted to `1..=p`, sorted, unique.
pub fn sparsity_grid(p: usize) -> Vec<usize> {
    let mut levels: Vec<usize> = [1, 2, 5, 10, p / 10, p / 5, p / 2, p]
        .into_iter()
        .filter(|&k| k >= 1 && k <= p)
        .collect();
    levels.sort_unstable();
    levels.dedup();
    levels
}

/// `n` equally spaced signal norms on `[0, 2.5√p]`.
pub fn sparse_signal_grid(p: usize, n: usize) -> Vec<f64> {
    let top = 2.5 * (p as f64).sqrt();
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    top
                } else {
                    top * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SureEvaluation {
    pub u: f64,
    pub psi: f64,
    pub psi_prime: f64,
    pub sure: f64,
    pub b_of_u: f64,
}

/// `B(u) = ψ²u − 2pψ − 4uψ′`.
pub fn excess_integrand(p: usize, u: f64, psi: f64, psi_prime: f64) -> f64 {
    psi * psi * u - 2.0 * p as f64 * psi - 4.0 * u * psi_prime
}

/// Unbiased risk estimate of `δ(y) = (1 − ψ(‖y‖²))·y`, where `psi_fn`
/// returns `(ψ(u), ψ′(u))`.
pub fn sure<F>(psi_fn: F, p: usize, y: &[f64]) -> Result<SureEvaluation>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    if p == 0 {
        return Err(domain("dimension must be positive"));
    }
    if y.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: y.len(),
        });
    }
    let u: f64 = y.iter().map(|x| x * x).sum();
    let (psi, psi_prime) = psi_fn(u)?;
    let b = excess_integrand(p, u, psi, psi_prime);
    Ok(SureEvaluation {
        u,
        psi,
        psi_prime,
        sure: p as f64 + b,
        b_of_u: b,
    })
}

/// `ψ(u) = (p−2)/u` and its derivative.
pub fn james_stein_psi(p: usize) -> impl Fn(f64) -> Result<(f64, f64)> + Sync + Copy {
    move |u: f64| {
        if u > 0.0 {
            let c = p as f64 - 2.0;
            Ok((c / u, -c / (u * u)))
        } else {
            Err(domain("James–Stein SURE is undefined at y = 0"))
        }
    }
}

/// Mean of SURE over `n` draws `Y ~ N(θ, I)`.
pub fn mc_sure<F>(psi_fn: F, theta: &[f64], n: usize, seed: u64) -> Result<RiskEstimate>
where
    F: Fn(f64) -> Result<(f64, f64)> + Sync,
{
    if n < 2 {
        return Err(domain(format!(
            "need at least 2 Monte Carlo draws, got {n}"
        )));
    }
    let p = theta.len();
    chunked(n, SAMPLE_CHUNK, seed, |rng, count, m| {
        for _ in 0..count {
            m.push(sure(&psi_fn, p, &noisy(theta, rng))?.sure);
        }
        Ok(())
    })
}
