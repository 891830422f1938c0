//! The scalar shrinkage factor `a(s) = E[V/(1+V) | ‖Y‖² = s]` of a scale
//! mixture prior, and its complement `ψ(s) = 1 − a(s)`.
//!
//! Given `V`, `‖Y‖²/(1+V) ~ χ²_p`, so the posterior of `V` given `s` is
//! proportional to `(1+V)^{−p/2} exp{−s / (2(1+V))}` times the mixing law.
//! Over a stored sample this is an importance-weighted average; for the
//! BetaPrime law it collapses to a ratio of incomplete gamma functions.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::mixing::{MixingSample, MixingSpec};
use crate::specialfn::ln_lower_incomplete_gamma;

pub const DEFAULT_GRID_POINTS: usize = 2500;

/// `(500 + 6√p)²`, the upper end of the default table grid.
pub fn default_s_max(p: usize) -> f64 {
    let r = 500.0 + 6.0 * (p as f64).sqrt();
    r * r
}

/// Posterior summaries at one value of `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiEval {
    /// `a(s) = E[V/(1+V) | s]`
    pub shrink: f64,
    /// `ψ(s) = E[1/(1+V) | s]`
    pub psi: f64,
    /// `ψ′(s) = −½ Var(1/(1+V) | s)`
    pub psi_prime: f64,
}

/// Importance-weighted posterior over a fixed set of variance draws.
///
/// Precomputes `1/(1+V_m)`, `V_m/(1+V_m)` and the `s`-free part of the
/// log-weight so repeated evaluations only pay for one `exp` per draw.
#[derive(Debug, Clone)]
pub struct MixturePosterior {
    p: usize,
    inv: Vec<f64>,
    frac: Vec<f64>,
    base: Vec<f64>,
}

impl MixturePosterior {
    pub fn new(draws: &[f64], p: usize) -> Result<Self> {
        if draws.is_empty() {
            return Err(domain("mixing sample is empty"));
        }
        if p == 0 {
            return Err(domain("dimension must be positive"));
        }
        if let Some(v) = draws.iter().find(|v| !(**v >= 0.0)) {
            return Err(domain(format!(
                "variance draws must be nonnegative, found {v}"
            )));
        }
        let half_p = p as f64 / 2.0;
        let inv: Vec<f64> = draws.iter().map(|v| 1.0 / (1.0 + v)).collect();
        let frac = draws
            .iter()
            .map(|v| if v.is_infinite() { 1.0 } else { v / (1.0 + v) })
            .collect();
        let base = draws.iter().map(|v| -half_p * v.ln_1p()).collect();
        Ok(Self { p, inv, frac, base })
    }

    pub fn dimension(&self) -> usize {
        self.p
    }

    pub fn eval(&self, s: f64) -> Result<PsiEval> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(domain(format!("s must be finite and nonnegative, got {s}")));
        }
        let half_s = 0.5 * s;
        let max = self
            .base
            .iter()
            .zip(&self.inv)
            .map(|(b, x)| b - half_s * x)
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut total, mut psi_acc, mut shrink_acc) = (0.0, 0.0, 0.0);
        for ((b, x), fr) in self.base.iter().zip(&self.inv).zip(&self.frac) {
            let w = (b - half_s * x - max).exp();
            total += w;
            psi_acc += w * x;
            shrink_acc += w * fr;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate(format!(
                "importance weights vanished at s = {s}"
            )));
        }
        let psi = psi_acc / total;
        let mut var = 0.0;
        for (b, x) in self.base.iter().zip(&self.inv) {
            let w = (b - half_s * x - max).exp();
            var += w * (x - psi) * (x - psi);
        }
        var /= total;
        Ok(PsiEval {
            shrink: shrink_acc / total,
            psi,
            psi_prime: -0.5 * var,
        })
    }
}

/// Monte Carlo shrinkage factor over variance draws.
pub fn shrink_mc(draws: &[f64], p: usize, s: f64) -> Result<f64> {
    Ok(MixturePosterior::new(draws, p)?.eval(s)?.shrink)
}

/// `ψ(s)` and `ψ′(s)` from the conditional-variance identity.
pub fn psi_and_derivative(draws: &[f64], p: usize, s: f64) -> Result<PsiEval> {
    MixturePosterior::new(draws, p)?.eval(s)
}

/// `1 − γ(p−1, s/2) / ((s/2) γ(p−2, s/2))`, clamped to `[0, 1]`, with the
/// removable singularity at `s = 0` replaced by its limit `1/(p−1)`.
pub fn shrink_betaprime_closed(p: usize, s: f64) -> Result<f64> {
    if p < 5 {
        return Err(domain(format!(
            "BetaPrime shrinkage requires p ≥ 5, got {p}"
        )));
    }
    if !(s >= 0.0) {
        return Err(domain(format!("s must be nonnegative, got {s}")));
    }
    if s == 0.0 {
        return Ok(1.0 / (p as f64 - 1.0));
    }
    let lambda = 0.5 * s;
    let pf = p as f64;
    let log_ratio = ln_lower_incomplete_gamma(pf - 1.0, lambda)?
        - lambda.ln()
        - ln_lower_incomplete_gamma(pf - 2.0, lambda)?;
    Ok((-log_ratio.exp_m1()).clamp(0.0, 1.0))
}

/// Where a table's values came from.
#[derive(Debug, Clone, PartialEq)]
pub enum TableSource {
    Sample {
        spec: MixingSpec,
        seed: u64,
        m: usize,
    },
    BetaPrimeClosed,
}

impl TableSource {
    fn header_tokens(&self) -> String {
        match self {
            TableSource::Sample { spec, seed, m } => {
                format!("source=mc spec={spec} seed={seed} M={m}")
            }
            TableSource::BetaPrimeClosed => "source=closed-form-betaprime".to_string(),
        }
    }
}

/// What to evaluate at each grid node.
#[derive(Debug, Clone, Copy)]
pub enum ShrinkageSource<'a> {
    Sample(&'a MixingSample),
    BetaPrimeClosed,
}

/// Shrinkage factors on a uniform grid over `[0, s_max]`, evaluated by linear
/// interpolation and held flat beyond `s_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageTable {
    p: usize,
    s_max: f64,
    grid: Vec<f64>,
    values: Vec<f64>,
    source: TableSource,
}

pub fn build_table(
    source: ShrinkageSource<'_>,
    p: usize,
    n_grid: usize,
    s_max: f64,
) -> Result<ShrinkageTable> {
    if n_grid < 2 {
        return Err(domain(format!(
            "table needs at least 2 grid points, got {n_grid}"
        )));
    }
    if !(s_max > 0.0) || !s_max.is_finite() {
        return Err(domain(format!("s_max must be positive, got {s_max}")));
    }
    let step = s_max / (n_grid - 1) as f64;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| {
            if i + 1 == n_grid {
                s_max
            } else {
                i as f64 * step
            }
        })
        .collect();
    let (values, table_source) = match source {
        ShrinkageSource::Sample(sample) => {
            let post = MixturePosterior::new(sample.draws(), p)?;
            let values = grid
                .par_iter()
                .map(|&s| post.eval(s).map(|e| e.shrink.clamp(0.0, 1.0)))
                .collect::<Result<Vec<_>>>()?;
            let src = TableSource::Sample {
                spec: sample.spec().clone(),
                seed: sample.seed(),
                m: sample.len(),
            };
            (values, src)
        }
        ShrinkageSource::BetaPrimeClosed => {
            let values = grid
                .par_iter()
                .map(|&s| shrink_betaprime_closed(p, s))
                .collect::<Result<Vec<_>>>()?;
            (values, TableSource::BetaPrimeClosed)
        }
    };
    Ok(ShrinkageTable {
        p,
        s_max,
        grid,
        values,
        source: table_source,
    })
}

/// [`build_table`] with 2500 nodes and `s_max = (500 + 6√p)²`.
pub fn build_default_table(source: ShrinkageSource<'_>, p: usize) -> Result<ShrinkageTable> {
    build_table(source, p, DEFAULT_GRID_POINTS, default_s_max(p))
}

impl ShrinkageTable {
    pub fn dimension(&self) -> usize {
        self.p
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> &TableSource {
        &self.source
    }

    pub fn eval(&self, s: f64) -> f64 {
        let idx = self.grid.partition_point(|&g| g <= s);
        if idx == 0 {
            return self.values[0];
        }
        if idx >= self.grid.len() {
            return *self.values.last().expect("table is nonempty");
        }
        let i = idx - 1;
        let (g0, g1) = (self.grid[i], self.grid[i + 1]);
        if s == g0 {
            return self.values[i];
        }
        let t = (s - g0) / (g1 - g0);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# p={} n_grid={} s_max={} {}",
            self.p,
            self.grid.len(),
            self.s_max,
            self.source.header_tokens()
        )?;
        writeln!(out, "s,a")?;
        for (s, a) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{s},{a}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty table file".into()))??;
        let body = header
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("table header must start with '# '".into()))?;
        let mut fields = std::collections::BTreeMap::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header token {tok:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| Error::Parse(format!("table header lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Parse(format!("bad {k}")))
        };
        let p = num("p")? as usize;
        let s_max = num("s_max")?;
        let n_grid = num("n_grid")? as usize;
        let source = match get("source")?.as_str() {
            "mc" => TableSource::Sample {
                spec: get("spec")?.parse()?,
                seed: get("seed")?
                    .parse()
                    .map_err(|_| Error::Parse("bad seed".into()))?,
                m: num("M")? as usize,
            },
            "closed-form-betaprime" => TableSource::BetaPrimeClosed,
            other => return Err(Error::Parse(format!("unknown table source {other:?}"))),
        };
        match lines.next() {
            Some(Ok(l)) if l.trim() == "s,a" => {}
            _ => {
                return Err(Error::Parse(
                    "table is missing the 's,a' column header".into(),
                ))
            }
        }
        let mut grid = Vec::with_capacity(n_grid);
        let mut values = Vec::with_capacity(n_grid);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (s, a) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad table row {line:?}")))?;
            grid.push(
                s.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad s {s:?}")))?,
            );
            values.push(
                a.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad a {a:?}")))?,
            );
        }
        if grid.len() != n_grid || grid.len() < 2 {
            return Err(Error::Parse(format!(
                "header says {n_grid} rows, found {}",
                grid.len()
            )));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] != 0.0 {
            return Err(Error::Parse(
                "table grid must start at 0 and increase strictly".into(),
            ));
        }
        if values.iter().any(|v: &f64| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parse("table values must lie in [0, 1]".into()));
        }
        Ok(Self {
            p,
            s_max,
            grid,
            values,
            source,
        })
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
