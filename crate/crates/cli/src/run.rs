//! Subcommand pipelines. Workers compute; only this module writes files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bnnrisk::diagnostics::{
    laplacian_step, ln_superharmonic_f, logspace, marginal_sqrt_laplacian, mixture_sqrt_laplacian,
    sweep_f, tail_decay_probe,
};
use bnnrisk::estimators::DecisionRule;
use bnnrisk::mixing::build_mixing_sample;
use bnnrisk::predictive::{kl_risk_mc, PredictivePrior, PredictiveProblem, PredictiveRule};
use bnnrisk::risk::{
    risk_curve, sparse_risk_curve, sparse_signal_grid, sparsity_grid, task_seed, RiskCurve,
    RISK_CSV_HEADER,
};
use bnnrisk::rng::derive_seed;
use bnnrisk::shrinkage::ShrinkageTable;
use serde::Serialize;

use crate::cache::{sha256_hex, TableCache, TableKey, TableRecipe};
use crate::config::{
    ExperimentConfig, KNOWN_RULES, QUICK_HS_N_MC, QUICK_K_DIR, QUICK_M_V, QUICK_N_MC,
};

pub const PREDICTIVE_CSV_HEADER: &str = "r,kl_risk,stderr,estimator,p,v_x,v_y";
pub const F_LAMBDAS: (f64, f64, usize) = (1e-6, 1e6, 200);
pub const F_SHAPES: [f64; 5] = [3.0, 4.0, 8.0, 23.0, 48.0];
pub const LAPLACIAN_TOL: f64 = 1e-6;

/// Stream tag for a rule, stable under reordering of the rule list.
fn rule_tag(name: &str) -> u64 {
    KNOWN_RULES
        .iter()
        .position(|r| *r == name)
        .expect("rule names are validated") as u64
}

/// Seed of the mixing sample behind a table rule, disjoint from risk streams.
fn sample_seed(seed: u64, name: &str) -> u64 {
    derive_seed(seed, &[1000 + rule_tag(name)])
}

pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    /// Named pass/fail checks; any failure maps to exit code 2.
    pub checks: Vec<(String, bool)>,
}

pub struct Runner {
    pub cfg: ExperimentConfig,
    out: PathBuf,
}

#[derive(Serialize)]
struct QuickFactors {
    m_v: usize,
    n_mc: usize,
    k_dir: usize,
    hs_n_mc: usize,
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    package_version: &'a str,
    core_version: &'a str,
    seed: u64,
    quick: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    quick_divisors: Option<QuickFactors>,
    outputs: Vec<OutputEntry>,
    checks: toml::Table,
    config: &'a ExperimentConfig,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let out = cfg.output_dir();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { cfg, out })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn cache(&self) -> TableCache {
        TableCache::new(self.out.join("cache"))
    }

    fn table_key(&self, rule: &str) -> Option<TableKey> {
        let c = &self.cfg;
        let recipe = match rule {
            "bnn-fixed" => TableRecipe::Sample {
                spec: c.fixed_spec(),
                seed: sample_seed(c.seed, rule),
                m: c.m_v,
            },
            "bnn-dropout" => TableRecipe::Sample {
                spec: c.dropout_spec(),
                seed: sample_seed(c.seed, rule),
                m: c.m_v,
            },
            "bnn-hyper" => TableRecipe::BetaPrimeClosed,
            _ => return None,
        };
        Some(TableKey {
            recipe,
            p: c.p,
            n_grid: c.table_points,
            s_max: c.table_s_max(),
        })
    }

    fn table(&self, name: &str, key: &TableKey) -> Result<ShrinkageTable> {
        let (table, hit) = self.cache().get_or_build(key)?;
        eprintln!(
            "{name}: table {} ({})",
            &key.hash()[..16],
            if hit { "cached" } else { "built" }
        );
        Ok(table)
    }

    fn rule(&self, name: &str) -> Result<DecisionRule> {
        let p = self.cfg.p;
        Ok(match name {
            "mle" => DecisionRule::mle(),
            "js" => DecisionRule::james_stein(p)?,
            // exact closed form; the table is only written for inspection
            "bnn-hyper" => DecisionRule::bnn_hyper(p)?,
            "horseshoe" => DecisionRule::horseshoe(self.cfg.horseshoe())?,
            "bnn-fixed" | "bnn-dropout" => {
                let key = self.table_key(name).expect("table rule");
                DecisionRule::radial_table(name, self.table(name, &key)?)
            }
            other => bail!("unknown rule `{other}`"),
        })
    }

    fn write(&self, name: &str, body: &[u8], outputs: &mut Vec<PathBuf>) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
        outputs.push(path);
        Ok(())
    }

    pub fn write_manifest(&self, subcommand: &str, outcome: &Outcome) -> Result<PathBuf> {
        let outputs = outcome
            .outputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p)?;
                Ok(OutputEntry {
                    file: p
                        .file_name()
                        .map(|f| f.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut checks = toml::Table::new();
        for (name, ok) in &outcome.checks {
            checks.insert(name.clone(), toml::Value::Boolean(*ok));
        }
        let manifest = Manifest {
            subcommand,
            package_version: env!("CARGO_PKG_VERSION"),
            core_version: bnnrisk::VERSION,
            seed: self.cfg.seed,
            quick: self.cfg.quick,
            quick_divisors: self.cfg.quick.then_some(QuickFactors {
                m_v: QUICK_M_V,
                n_mc: QUICK_N_MC,
                k_dir: QUICK_K_DIR,
                hs_n_mc: QUICK_HS_N_MC,
            }),
            outputs,
            checks,
            config: &self.cfg,
        };
        let path = self.out.join(format!("manifest-{subcommand}.toml"));
        fs::write(&path, toml::to_string(&manifest)?)?;
        Ok(path)
    }

    pub fn shrinkage_table(&self) -> Result<Outcome> {
        let mut outputs = Vec::new();
        for name in &self.cfg.rules {
            let Some(key) = self.table_key(name) else {
                continue;
            };
            let table = self.table(name, &key)?;
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            self.write(
                &format!("shrinkage-{name}-p{}.csv", self.cfg.p),
                &buf,
                &mut outputs,
            )?;
        }
        if outputs.is_empty() {
            bail!("none of the selected rules uses a shrinkage table");
        }
        Ok(Outcome {
            outputs,
            checks: vec![],
        })
    }

    pub fn risk_curve(&self) -> Result<Outcome> {
        let c = &self.cfg;
        let grid = c.r_grid();
        let mut buf = Vec::new();
        writeln!(buf, "{RISK_CSV_HEADER}")?;
        for name in &c.rules {
            let rule = self.rule(name)?;
            eprintln!(
                "{name}: {} radii × {} directions × {} draws",
                grid.len(),
                c.k_dir,
                c.n_mc
            );
            let curve = risk_curve(
                &rule,
                c.p,
                &grid,
                c.k_dir,
                c.n_mc,
                derive_seed(c.seed, &[rule_tag(name)]),
            )?;
            curve.write_rows(&mut buf)?;
        }
        let mut outputs = Vec::new();
        self.write(&format!("risk-curve-p{}.csv", c.p), &buf, &mut outputs)?;
        Ok(Outcome {
            outputs,
            checks: vec![],
        })
    }

    pub fn horseshoe_risk(&self) -> Result<Outcome> {
        let c = &self.cfg;
        let levels = if c.sparsity.is_empty() {
            sparsity_grid(c.p)
        } else {
            c.sparsity.clone()
        };
        let grid = sparse_signal_grid(c.p, c.signal_points);
        let mut names = c.rules.clone();
        if !names.iter().any(|r| r == "horseshoe") {
            names.push("horseshoe".into());
        }
        let mut buf = Vec::new();
        writeln!(buf, "{RISK_CSV_HEADER}")?;
        for name in &names {
            let rule = self.rule(name)?;
            for &k in &levels {
                eprintln!(
                    "{name}: k = {k}, {} radii × {} draws",
                    grid.len(),
                    c.hs_n_mc
                );
                let seed = derive_seed(c.seed, &[rule_tag(name), k as u64]);
                let curve: RiskCurve = sparse_risk_curve(&rule, c.p, k, &grid, c.hs_n_mc, seed)?;
                curve.write_rows(&mut buf)?;
            }
        }
        let mut outputs = Vec::new();
        self.write(&format!("sparse-risk-p{}.csv", c.p), &buf, &mut outputs)?;
        Ok(Outcome {
            outputs,
            checks: vec![],
        })
    }

    pub fn predictive_risk(&self) -> Result<Outcome> {
        let c = &self.cfg;
        let problem =
            PredictiveProblem::new(c.p, c.v_x, c.v_y, PredictivePrior::BetaPrime { scale: 1.0 })?;
        let grid = sparse_signal_grid(c.p, c.signal_points);
        let mut buf = Vec::new();
        writeln!(buf, "{PREDICTIVE_CSV_HEADER}")?;
        for (e, est) in [PredictiveRule::Bayes, PredictiveRule::Uniform]
            .into_iter()
            .enumerate()
        {
            for (i, &r) in grid.iter().enumerate() {
                let mut theta = vec![0.0; c.p];
                theta[0] = r;
                let seed = task_seed(derive_seed(c.seed, &[100 + e as u64]), i, 0);
                let kl = kl_risk_mc(&problem, est, &theta, c.n_outer, c.n_inner, seed)?;
                writeln!(
                    buf,
                    "{r},{},{},{},{},{},{}",
                    kl.risk,
                    kl.stderr,
                    est.label(),
                    c.p,
                    c.v_x,
                    c.v_y
                )?;
            }
        }
        let mut outputs = Vec::new();
        self.write(&format!("predictive-risk-p{}.csv", c.p), &buf, &mut outputs)?;
        Ok(Outcome {
            outputs,
            checks: vec![],
        })
    }

    pub fn diagnostics(&self) -> Result<Outcome> {
        let c = &self.cfg;
        let mut outputs = Vec::new();
        let mut checks = Vec::new();

        let lambdas = logspace(F_LAMBDAS.0, F_LAMBDAS.1, F_LAMBDAS.2);
        let (mut positive, mut increasing) = (true, true);
        for a in F_SHAPES {
            let sw = sweep_f(a, &lambdas)?;
            positive &= sw.all_positive;
            increasing &= sw.increasing;
            let mut buf = Vec::new();
            writeln!(buf, "lambda,F,ln_F")?;
            for (l, f) in sw.lambdas.iter().zip(&sw.values) {
                writeln!(buf, "{l:e},{f:e},{}", ln_superharmonic_f(a, *l)?)?;
            }
            self.write(&format!("f-lambda-a{a}.csv"), &buf, &mut outputs)?;
        }
        checks.push(("f_positive".into(), positive));
        checks.push(("f_increasing".into(), increasing));

        if c.p >= 5 {
            let problem = PredictiveProblem::betaprime(c.p)?;
            let radii: Vec<f64> = (2..=300).map(|i| 0.1 * i as f64).collect();
            let lap = marginal_sqrt_laplacian(&problem, &radii)?;
            let mut buf = Vec::new();
            writeln!(buf, "r,laplacian,h")?;
            for (r, l) in radii.iter().zip(&lap) {
                writeln!(buf, "{r},{l},{}", laplacian_step(*r))?;
            }
            self.write(
                &format!("laplacian-betaprime-p{}.csv", c.p),
                &buf,
                &mut outputs,
            )?;
            checks.push((
                "betaprime_laplacian_nonpositive".into(),
                lap.iter().all(|l| *l <= LAPLACIAN_TOL),
            ));
        }

        let sample = build_mixing_sample(&c.fixed_spec(), c.m_v, sample_seed(c.seed, "bnn-fixed"))?;
        let radii: Vec<f64> = c.r_grid().into_iter().filter(|r| *r > 0.0).collect();
        let probe = mixture_sqrt_laplacian(&sample, c.p, &radii)?;
        let mut buf = Vec::new();
        writeln!(buf, "r,laplacian,relative")?;
        for pr in &probe {
            writeln!(
                buf,
                "{},{},{}",
                pr.r,
                pr.relative_laplacian * pr.ln_sqrt_m.exp(),
                pr.relative_laplacian
            )?;
        }
        self.write(&format!("laplacian-fixed-p{}.csv", c.p), &buf, &mut outputs)?;
        let violations = probe
            .iter()
            .filter(|pr| pr.relative_laplacian > 0.0)
            .count();
        eprintln!(
            "fixed-scale probe: positive Δ√m at {violations} of {} radii (informational)",
            probe.len()
        );

        let tail_r: Vec<f64> = (0..=10).map(|i| 20.0 + 10.0 * i as f64).collect();
        let depth = c.scales.len();
        let fit = tail_decay_probe(&sample, c.p, depth, &tail_r)?;
        let mut buf = Vec::new();
        writeln!(buf, "r,ln_m")?;
        for (r, l) in tail_r.iter().zip(&fit.ln_m) {
            writeln!(buf, "{r},{l}")?;
        }
        self.write(&format!("tail-probe-p{}.csv", c.p), &buf, &mut outputs)?;
        eprintln!(
            "tail fit: slope {:.6} ± {:.6} against r^(2/{depth})",
            fit.slope, fit.slope_stderr
        );
        checks.push(("tail_slope_negative".into(), fit.slope < 0.0));
        Ok(Outcome { outputs, checks })
    }
}
