//! Mixing laws for the effective output variance of a ReLU network prior.
//!
//! Conditional on the variance `V`, the network output is `N_p(0, V·I_p)`.
//! For a depth-`d` network with hidden widths `n_ℓ` and layer scales `σ_ℓ`,
//!
//! ```text
//! V = 2^{d−1} ‖x‖² (∏_{ℓ=1}^{d} σ_ℓ²) (∏_{ℓ=1}^{d−1} T_ℓ),   T_ℓ | k_ℓ ~ Gamma(k_ℓ/2, 1)
//! ```
//!
//! with `k_ℓ ∈ {1..n_ℓ}` drawn with probability ∝ `C(n_ℓ, k_ℓ)`. The mixture
//! weights of the continuous component carry an extra global factor
//! `2^{−Σ n_ℓ}` that is never materialized: every posterior quantity built on
//! top of these draws is a ratio in which it cancels.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::rng::stream;
use crate::specialfn::{ln_gamma_unchecked, sample_gamma_unchecked};

/// Draws per independently seeded chunk in [`build_mixing_sample`].
pub const SAMPLE_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixingKind {
    FixedBnn,
    DropoutBnn,
    BetaPrime,
    PointMass,
}

/// Architecture of the network whose output variance is being mixed over.
#[derive(Debug, Clone, PartialEq)]
pub struct BnnArchitecture {
    /// Hidden widths `n_1..n_{d−1}`.
    pub widths: Vec<usize>,
    /// Layer scales `σ_1..σ_d`.
    pub scales: Vec<f64>,
    pub input_norm: f64,
}

impl BnnArchitecture {
    /// Depth 3, widths (20, 20), unit scales, unit input norm.
    pub fn reference() -> Self {
        Self {
            widths: vec![20, 20],
            scales: vec![1.0; 3],
            input_norm: 1.0,
        }
    }

    pub fn depth(&self) -> usize {
        self.scales.len()
    }

    /// `2^{d−1} ‖x‖² ∏ σ_ℓ²`.
    pub fn prefactor(&self) -> f64 {
        let scales: f64 = self.scales.iter().map(|s| s * s).product();
        2f64.powi(self.depth() as i32 - 1) * self.input_norm * self.input_norm * scales
    }

    fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidSpec("depth must be at least 1".into()));
        }
        if self.widths.len() + 1 != self.scales.len() {
            return Err(Error::InvalidSpec(format!(
                "depth {} needs {} hidden widths, got {}",
                self.depth(),
                self.depth() - 1,
                self.widths.len()
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidSpec("hidden widths must be positive".into()));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidSpec("layer scales must be positive".into()));
        }
        if !(self.input_norm > 0.0 && self.input_norm.is_finite()) {
            return Err(Error::InvalidSpec("input norm must be positive".into()));
        }
        Ok(())
    }
}

/// Declarative description of a mixing distribution for the output variance.
#[derive(Debug, Clone, PartialEq)]
pub enum MixingSpec {
    FixedBnn(BnnArchitecture),
    /// Inverted dropout with keep probabilities `q_1..q_{d−1}`.
    DropoutBnn {
        arch: BnnArchitecture,
        keep: Vec<f64>,
    },
    /// `W ~ BetaPrime(1, p/2 − 2)`.
    BetaPrime {
        p: usize,
    },
    /// Degenerate law at `variance` (zero allowed as an oracle device).
    PointMass {
        variance: f64,
    },
}

impl MixingSpec {
    pub fn fixed_reference() -> Self {
        MixingSpec::FixedBnn(BnnArchitecture::reference())
    }

    pub fn dropout_reference() -> Self {
        MixingSpec::DropoutBnn {
            arch: BnnArchitecture::reference(),
            keep: vec![0.8, 0.8],
        }
    }

    pub fn kind(&self) -> MixingKind {
        match self {
            MixingSpec::FixedBnn(_) => MixingKind::FixedBnn,
            MixingSpec::DropoutBnn { .. } => MixingKind::DropoutBnn,
            MixingSpec::BetaPrime { .. } => MixingKind::BetaPrime,
            MixingSpec::PointMass { .. } => MixingKind::PointMass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MixingSpec::FixedBnn(arch) => arch.validate(),
            MixingSpec::DropoutBnn { arch, keep } => {
                arch.validate()?;
                if keep.len() != arch.widths.len() {
                    return Err(Error::InvalidSpec(format!(
                        "need {} keep probabilities, got {}",
                        arch.widths.len(),
                        keep.len()
                    )));
                }
                if keep.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
                    return Err(Error::InvalidSpec(
                        "keep probabilities must lie in (0, 1]".into(),
                    ));
                }
                Ok(())
            }
            MixingSpec::BetaPrime { p } => {
                if *p < 5 {
                    Err(domain(format!("BetaPrime mixing requires p ≥ 5, got {p}")))
                } else {
                    Ok(())
                }
            }
            MixingSpec::PointMass { variance } => {
                if *variance >= 0.0 && variance.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidSpec(format!(
                        "point-mass variance must be ≥ 0, got {variance}"
                    )))
                }
            }
        }
    }

    /// Shape `b = p/2 − 2` of the BetaPrime law.
    pub fn betaprime_shape(p: usize) -> Result<f64> {
        if p < 5 {
            return Err(domain(format!("BetaPrime mixing requires p ≥ 5, got {p}")));
        }
        Ok(p as f64 / 2.0 - 2.0)
    }
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn split_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::Parse(format!("bad list element {t:?}")))
        })
        .collect()
}

impl fmt::Display for MixingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixingSpec::FixedBnn(a) => write!(
                f,
                "fixed-bnn:n={};sigma={};x={}",
                join(&a.widths),
                join(&a.scales),
                a.input_norm
            ),
            MixingSpec::DropoutBnn { arch: a, keep } => write!(
                f,
                "dropout-bnn:n={};sigma={};x={};q={}",
                join(&a.widths),
                join(&a.scales),
                a.input_norm,
                join(keep)
            ),
            MixingSpec::BetaPrime { p } => write!(f, "betaprime:p={p}"),
            MixingSpec::PointMass { variance } => write!(f, "point-mass:v={variance}"),
        }
    }
}

impl FromStr for MixingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("mixing spec {s:?} lacks a kind prefix")))?;
        let mut fields = std::collections::BTreeMap::new();
        for kv in rest.split(';') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad field {kv:?} in mixing spec")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("mixing spec {s:?} lacks field {k}")))
        };
        let arch = || -> Result<BnnArchitecture> {
            Ok(BnnArchitecture {
                widths: split_list(get("n")?)?,
                scales: split_list(get("sigma")?)?,
                input_norm: get("x")?
                    .parse()
                    .map_err(|_| Error::Parse("bad input norm".into()))?,
            })
        };
        let spec = match kind {
            "fixed-bnn" => MixingSpec::FixedBnn(arch()?),
            "dropout-bnn" => MixingSpec::DropoutBnn {
                arch: arch()?,
                keep: split_list(get("q")?)?,
            },
            "betaprime" => MixingSpec::BetaPrime {
                p: get("p")?
                    .parse()
                    .map_err(|_| Error::Parse("bad dimension".into()))?,
            },
            "point-mass" => MixingSpec::PointMass {
                variance: get("v")?
                    .parse()
                    .map_err(|_| Error::Parse("bad variance".into()))?,
            },
            other => return Err(Error::Parse(format!("unknown mixing kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Walker/Vose alias table over `{1..n}` with weights ∝ `C(n, k)`.
#[derive(Debug, Clone)]
struct BinomialIndexTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl BinomialIndexTable {
    fn new(n: usize) -> Self {
        let ln_fact_n = ln_gamma_unchecked(n as f64 + 1.0);
        let logw: Vec<f64> = (1..=n)
            .map(|k| {
                ln_fact_n
                    - ln_gamma_unchecked(k as f64 + 1.0)
                    - ln_gamma_unchecked((n - k) as f64 + 1.0)
            })
            .collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut scaled: Vec<f64> = w.iter().map(|x| x * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        Self { prob, alias }
    }

    /// Returns `k ∈ {1..n}`.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.prob.len();
        let i = rng.random_range(0..n);
        let u: f64 = rng.random();
        1 + if u < self.prob[i] { i } else { self.alias[i] }
    }
}

#[derive(Debug, Clone)]
enum Plan {
    Fixed {
        prefactor: f64,
        layers: Vec<BinomialIndexTable>,
    },
    /// `tables[ℓ][N−1]` is the index table for `N` active units in layer ℓ.
    Dropout {
        prefactor: f64,
        layers: Vec<(Binomial, f64, Vec<BinomialIndexTable>)>,
    },
    BetaPrime {
        b: f64,
    },
    PointMass {
        variance: f64,
    },
}

/// A validated spec with its cached alias tables; draws one `V` per call.
#[derive(Debug, Clone)]
pub struct MixingSampler {
    spec: MixingSpec,
    plan: Plan,
}

impl MixingSampler {
    pub fn new(spec: &MixingSpec) -> Result<Self> {
        spec.validate()?;
        let plan = match spec {
            MixingSpec::FixedBnn(arch) => Plan::Fixed {
                prefactor: arch.prefactor(),
                layers: arch
                    .widths
                    .iter()
                    .map(|&n| BinomialIndexTable::new(n))
                    .collect(),
            },
            MixingSpec::DropoutBnn { arch, keep } => {
                let inv_keep: f64 = keep.iter().map(|q| 1.0 / q).product();
                let layers = arch
                    .widths
                    .iter()
                    .zip(keep)
                    .map(|(&n, &q)| {
                        let binom = Binomial::new(n as u64, q)
                            .map_err(|e| Error::InvalidSpec(format!("binomial({n}, {q}): {e}")))?;
                        let tables = (1..=n).map(BinomialIndexTable::new).collect();
                        Ok((binom, q, tables))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Plan::Dropout {
                    prefactor: arch.prefactor() * inv_keep,
                    layers,
                }
            }
            MixingSpec::BetaPrime { p } => Plan::BetaPrime {
                b: MixingSpec::betaprime_shape(*p)?,
            },
            MixingSpec::PointMass { variance } => Plan::PointMass {
                variance: *variance,
            },
        };
        Ok(Self {
            spec: spec.clone(),
            plan,
        })
    }

    pub fn spec(&self) -> &MixingSpec {
        &self.spec
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.plan {
            Plan::Fixed { prefactor, layers } => {
                let mut v = *prefactor;
                for table in layers {
                    let k = table.sample(rng);
                    v *= sample_gamma_unchecked(k as f64 / 2.0, rng);
                }
                v
            }
            Plan::Dropout { prefactor, layers } => {
                let mut active = Vec::with_capacity(layers.len());
                for (binom, q, tables) in layers {
                    // Binomial(n, 1) is degenerate; skip it so q = 1 reproduces
                    // the fixed-scale stream draw for draw.
                    let n_active = if *q == 1.0 {
                        tables.len()
                    } else {
                        binom.sample(rng) as usize
                    };
                    active.push(n_active);
                }
                if active.contains(&0) {
                    return 0.0;
                }
                let mut v = *prefactor;
                for ((_, _, tables), n_active) in layers.iter().zip(active) {
                    let k = tables[n_active - 1].sample(rng);
                    v *= sample_gamma_unchecked(k as f64 / 2.0, rng);
                }
                v
            }
            Plan::BetaPrime { b } => {
                let u: f64 = rng.random();
                betaprime_inverse_cdf(*b, u)
            }
            Plan::PointMass { variance } => *variance,
        }
    }
}

/// `W = (1 − U)^{−1/b} − 1`, the inverse of `F(w) = 1 − (1 + w)^{−b}`.
pub fn betaprime_inverse_cdf(b: f64, u: f64) -> f64 {
    (-(-u).ln_1p() / b).exp_m1()
}

fn expect_kind(spec: &MixingSpec, kind: MixingKind) -> Result<()> {
    if spec.kind() == kind {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!(
            "expected a {kind:?} spec, got {:?}",
            spec.kind()
        )))
    }
}

/// One draw from the fixed-scale law. Rebuilds the alias tables; use
/// [`MixingSampler`] for repeated draws.
pub fn sample_fixed_bnn_variance<R: Rng + ?Sized>(spec: &MixingSpec, rng: &mut R) -> Result<f64> {
    expect_kind(spec, MixingKind::FixedBnn)?;
    Ok(MixingSampler::new(spec)?.sample(rng))
}

pub fn sample_dropout_bnn_variance<R: Rng + ?Sized>(spec: &MixingSpec, rng: &mut R) -> Result<f64> {
    expect_kind(spec, MixingKind::DropoutBnn)?;
    Ok(MixingSampler::new(spec)?.sample(rng))
}

pub fn sample_betaprime<R: Rng + ?Sized>(spec: &MixingSpec, rng: &mut R) -> Result<f64> {
    expect_kind(spec, MixingKind::BetaPrime)?;
    Ok(MixingSampler::new(spec)?.sample(rng))
}

/// A stored i.i.d. sample of variance draws, used as an empirical mixing law.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingSample {
    spec: MixingSpec,
    seed: u64,
    draws: Vec<f64>,
}

impl MixingSample {
    pub fn spec(&self) -> &MixingSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn header(&self) -> String {
        format!(
            "# spec={} seed={} M={}",
            self.spec,
            self.seed,
            self.draws.len()
        )
    }

    /// Header line, then one draw per line in shortest round-trip decimal form.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header())?;
        for v in &self.draws {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mixing sample file".into()))??;
        let body = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("mixing sample header must start with '# '".into()))?;
        let (mut spec, mut seed, mut m) = (None, None, None);
        for tok in body.split_whitespace() {
            match tok.split_once('=') {
                Some(("spec", v)) => spec = Some(v.parse::<MixingSpec>()?),
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                Some(("M", v)) => m = v.parse::<usize>().ok(),
                _ => return Err(Error::Parse(format!("unexpected header token {tok:?}"))),
            }
        }
        let (spec, seed, m) = match (spec, seed, m) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(Error::Parse(
                    "mixing sample header needs spec, seed and M".into(),
                ))
            }
        };
        let mut draws = Vec::with_capacity(m);
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let v: f64 = t
                .parse()
                .map_err(|_| Error::Parse(format!("bad draw {t:?}")))?;
            if !(v >= 0.0) {
                return Err(Error::Parse(format!("negative variance draw {v}")));
            }
            draws.push(v);
        }
        if draws.len() != m {
            return Err(Error::Parse(format!(
                "header says M={m}, found {} draws",
                draws.len()
            )));
        }
        Ok(Self { spec, seed, draws })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// `M` i.i.d. draws; chunk `c` of [`SAMPLE_CHUNK`] draws uses stream `(seed, c)`.
pub fn build_mixing_sample(spec: &MixingSpec, m: usize, seed: u64) -> Result<MixingSample> {
    if m == 0 {
        return Err(domain("mixing sample size must be positive"));
    }
    let sampler = MixingSampler::new(spec)?;
    let mut draws = vec![0.0; m];
    draws
        .par_chunks_mut(SAMPLE_CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let mut rng = stream(seed, &[c as u64]);
            for slot in chunk.iter_mut() {
                *slot = sampler.sample(&mut rng);
            }
        });
    Ok(MixingSample {
        spec: spec.clone(),
        seed,
        draws,
    })
}
